use serde::{Deserialize, Serialize};

use crate::elicitation::UserChannel;
use crate::error::{Error, Result};
use crate::gateway::{cosine, tags, Gateway};
use crate::inference::{deterministic_shuffle, Decision};
use crate::model::Scenario;
use crate::prompts::{parse_first_integer, TemplateName, TemplateSet, REPAIR_SUFFIX};

pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_CORRECTION_BUDGET: usize = 20;

/// Edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != *cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - d / max(|a|, |b|)`; two empty strings are identical.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    Levenshtein,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherEntry {
    pub context: String,
    pub preference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// Append-only memory of (context, induced preference) pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CipherMemory {
    entries: Vec<CipherEntry>,
    pub mode: RetrievalMode,
    pub top_k: usize,
    pub correction_budget: usize,
    pub corrections_used: usize,
}

impl CipherMemory {
    pub fn new(mode: RetrievalMode, top_k: usize, correction_budget: usize) -> Result<Self> {
        if top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(CipherMemory {
            entries: Vec::new(),
            mode,
            top_k,
            correction_budget,
            corrections_used: 0,
        })
    }

    pub fn entries(&self) -> &[CipherEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, gateway: &Gateway, context: &str, preference: &str) -> Result<()> {
        let embedding = match self.mode {
            RetrievalMode::Cosine => Some(gateway.embed(context)?),
            RetrievalMode::Levenshtein => None,
        };
        self.entries.push(CipherEntry {
            context: context.to_string(),
            preference: preference.to_string(),
            embedding,
        });
        Ok(())
    }

    /// Similarity of every entry to `context`, in insertion order.
    pub fn scores(&self, gateway: &Gateway, context: &str) -> Result<Vec<f64>> {
        match self.mode {
            RetrievalMode::Levenshtein => Ok(self
                .entries
                .iter()
                .map(|e| levenshtein_similarity(&e.context, context))
                .collect()),
            RetrievalMode::Cosine => {
                if self.entries.is_empty() {
                    return Ok(Vec::new());
                }
                let q = gateway.embed(context)?;
                self.entries
                    .iter()
                    .map(|e| match &e.embedding {
                        Some(v) => Ok(cosine(v, &q)),
                        None => Ok(cosine(&gateway.embed(&e.context)?, &q)),
                    })
                    .collect()
            }
        }
    }

    /// Indices of the `top_k` most similar entries; earlier entries win ties.
    pub fn retrieve(&self, gateway: &Gateway, context: &str) -> Result<Vec<usize>> {
        Ok(top_k_indices(&self.scores(gateway, context)?, self.top_k))
    }
}

/// Stable top-k: sorted by descending score, ties by ascending index.
pub(crate) fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, Default)]
pub struct CipherRun {
    pub decisions: Vec<Decision>,
    pub user_corrections: usize,
    pub inductions: usize,
}

impl CipherRun {
    pub fn accuracy(&self) -> f64 {
        crate::inference::accuracy(&self.decisions)
    }
}

/// Retrieval-memory baseline driver.
#[derive(Debug, Clone)]
pub struct Cipher<'a> {
    gateway: &'a Gateway,
    templates: &'a TemplateSet,
}

impl<'a> Cipher<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a TemplateSet) -> Self {
        Cipher { gateway, templates }
    }

    /// Aggregated preference text for `context`; empty when memory is empty.
    pub fn retrieve_preference(&self, memory: &CipherMemory, context: &str) -> Result<String> {
        let hits = memory.retrieve(self.gateway, context)?;
        if hits.is_empty() {
            return Ok(String::new());
        }
        let prefs = hits
            .iter()
            .map(|&i| format!("- {}", memory.entries[i].preference))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = self
            .templates
            .render(TemplateName::CipherAggregate, &[("prefs", &prefs)])?;
        Ok(self
            .gateway
            .ask(tags::CIPHER_AGGREGATE, prompt)?
            .text
            .trim()
            .to_string())
    }

    /// Select, score, and learn from one labeled scenario.
    pub fn step(
        &self,
        memory: &mut CipherMemory,
        scenario: &Scenario,
        channel: &mut dyn UserChannel,
        run: &mut CipherRun,
    ) -> Result<()> {
        let preferred = scenario
            .preferred
            .ok_or_else(|| Error::Config(format!("scenario {} is unlabeled", scenario.id)))?;
        let context = scenario.context();
        let pref = self.retrieve_preference(memory, &context)?;
        let perm = deterministic_shuffle(
            &scenario.id,
            self.gateway.model_id(),
            scenario.candidates.len(),
        );
        let actions = perm
            .iter()
            .enumerate()
            .map(|(p, &o)| {
                format!(
                    "{}. {}",
                    p + 1,
                    scenario.candidate(o).map(|c| c.text.as_str()).unwrap_or("")
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = self.templates.render(
            TemplateName::CipherSelect,
            &[
                ("env", &scenario.environment),
                ("req", &scenario.request),
                ("pref", if pref.is_empty() { "(none yet)" } else { &pref }),
                ("actions", &actions),
            ],
        )?;
        let in_range = |t: &str| parse_first_integer(t).filter(|&p| p >= 1 && p <= perm.len());
        let mut raw = in_range(&self.gateway.ask(tags::CIPHER_SELECT, prompt.clone())?.text);
        if raw.is_none() {
            raw = in_range(
                &self
                    .gateway
                    .ask(tags::CIPHER_SELECT, format!("{prompt}{REPAIR_SUFFIX}"))?
                    .text,
            );
        }
        let chosen = raw.map(|p| perm[p - 1]);
        let correct = chosen == Some(preferred);
        run.decisions.push(Decision {
            scenario_id: scenario.id.clone(),
            shown_order: perm.clone(),
            raw_action: raw,
            chosen_original_index: chosen,
            raw_block: None,
            correct: Some(correct),
            rule_version: None,
            error: raw.is_none().then(|| "unparseable selection".to_string()),
        });
        if correct {
            return Ok(());
        }
        let selected = chosen
            .and_then(|c| scenario.candidate(c))
            .map(|c| c.text.clone())
            .unwrap_or_else(|| "(nothing)".to_string());
        let learned = if memory.corrections_used < memory.correction_budget {
            let q = self.templates.render(
                TemplateName::CipherCorrection,
                &[("request", &scenario.request), ("selected", &selected)],
            )?;
            memory.corrections_used += 1;
            run.user_corrections += 1;
            channel.answer(&q)?
        } else {
            let numbered = scenario
                .candidates
                .iter()
                .map(|c| format!("{}. {}", c.index, c.text))
                .collect::<Vec<_>>()
                .join("\n");
            let prompt = self.templates.render(
                TemplateName::CipherInduce,
                &[
                    ("selected", &selected),
                    ("correct", scenario.preferred_text().unwrap_or_default()),
                    ("actions", &numbered),
                ],
            )?;
            run.inductions += 1;
            self.gateway
                .ask(tags::CIPHER_INDUCE, prompt)?
                .text
                .trim()
                .to_string()
        };
        memory.push(self.gateway, &context, &learned)
    }

    pub fn run(
        &self,
        memory: &mut CipherMemory,
        scenarios: &[Scenario],
        channel: &mut dyn UserChannel,
    ) -> Result<CipherRun> {
        let mut run = CipherRun::default();
        for s in scenarios {
            self.step(memory, s, channel, &mut run)?;
        }
        Ok(run)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elicitation::FixedAnswers;
    use crate::simulation::{install_mock, MockScript};

    /// Textbook full-matrix edit distance.
    fn dp_oracle(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for (j, cell) in d[0].iter_mut().enumerate() {
            *cell = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = (d[i - 1][j] + 1)
                    .min(d[i][j - 1] + 1)
                    .min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn kitten_sitting() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(dp_oracle("kitten", "sitting"), 3);
        assert!((levenshtein_similarity("kitten", "sitting") - (1.0 - 3.0 / 7.0)).abs() < 1e-12);
        for (a, b) in [
            ("", "abc"),
            ("flaw", "lawn"),
            ("café", "cafe"),
            ("same", "same"),
        ] {
            assert_eq!(levenshtein(a, b), dp_oracle(a, b));
        }
    }

    #[test]
    fn empty_memory_gives_empty_preference_without_calls() {
        let g = install_mock("m", MockScript::fixed("x"));
        let t = TemplateSet::builtin();
        let mem = CipherMemory::new(RetrievalMode::Levenshtein, 3, 20).unwrap();
        assert_eq!(
            Cipher::new(&g, &t)
                .retrieve_preference(&mem, "ctx")
                .unwrap(),
            ""
        );
        assert_eq!(g.ledger_count(None), 0);
    }

    #[test]
    fn identical_context_ranks_first_in_both_modes() {
        let g = install_mock("m", MockScript::fixed("x"));
        for mode in [RetrievalMode::Levenshtein, RetrievalMode::Cosine] {
            let mut mem = CipherMemory::new(mode, 2, 0).unwrap();
            mem.push(&g, "garage bring me a soda", "a").unwrap();
            mem.push(&g, "kitchen bring me a snack", "b").unwrap();
            mem.push(&g, "office hand me a pen", "c").unwrap();
            assert_eq!(mem.retrieve(&g, "kitchen bring me a snack").unwrap()[0], 1);
        }
    }

    fn scenario() -> Scenario {
        Scenario::new(
            "c1",
            "Kitchen",
            "Bring a drink",
            ["Hot tea", "Iced tea"],
            Some(2),
        )
    }

    #[test]
    fn feedback_paths() {
        let t = TemplateSet::builtin();
        let s = scenario();
        let perm = deterministic_shuffle("c1", "m", 2);
        let right = perm.iter().position(|&o| o == 2).unwrap() + 1;
        let wrong = 3 - right;

        let g = install_mock("m", MockScript::fixed(right.to_string()));
        let mut mem = CipherMemory::new(RetrievalMode::Levenshtein, 3, 1).unwrap();
        let mut ch = FixedAnswers::new(["cold please"], "");
        let run = Cipher::new(&g, &t)
            .run(&mut mem, std::slice::from_ref(&s), &mut ch)
            .unwrap();
        assert!(run.decisions[0].is_correct());
        assert!(mem.is_empty());

        let g = install_mock("m", MockScript::fixed(wrong.to_string()));
        let mut mem = CipherMemory::new(RetrievalMode::Levenshtein, 3, 1).unwrap();
        let mut ch = FixedAnswers::new(["cold please"], "");
        let run = Cipher::new(&g, &t)
            .run(&mut mem, &[s.clone(), s.clone()], &mut ch)
            .unwrap();
        assert_eq!(ch.asked.len(), 1);
        assert_eq!((run.user_corrections, run.inductions), (1, 1));
        assert_eq!(mem.len(), 2);
        assert_eq!(mem.entries()[0].preference, "cold please");
        assert_eq!(g.ledger_count(Some(tags::CIPHER_INDUCE)), 1);
        assert_eq!(g.ledger_count(Some(tags::CIPHER_AGGREGATE)), 1);
    }
}
