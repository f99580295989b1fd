//! Batched, preference-conditioned action selection.
//!
//! Candidates are shown to the model in a per-(scenario, model) deterministic
//! order; the chosen display position is mapped back to the original
//! candidate index before scoring.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{tags, Gateway};
use crate::hash::CounterRng;
use crate::model::{DialogueHistory, ExampleSet, RuleSet, Scenario};
use crate::prompts::{
    parse_decision_blocks_partial, DecisionBlock, TemplateName, TemplateSet, REPAIR_SUFFIX,
};

pub const DEFAULT_BATCH_SIZE: usize = 10;

/// Fisher–Yates permutation of `1..=n` keyed on `"scenario_id|model_id"`.
///
/// `perm[p]` is the original index of the candidate shown at display
/// position `p + 1`.
pub fn deterministic_shuffle(scenario_id: &str, model_id: &str, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (1..=n).collect();
    let mut rng = CounterRng::from_key(&format!("{scenario_id}|{model_id}"));
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Display position (1-based) at which original candidate `original` appears.
pub fn display_position(perm: &[usize], original: usize) -> Option<usize> {
    perm.iter().position(|&o| o == original).map(|p| p + 1)
}

/// What the selector is conditioned on.
#[derive(Debug, Clone)]
pub enum Conditioning {
    None,
    Rules(RuleSet),
    Transcript(DialogueHistory),
    Examples(ExampleSet),
    LabeledExamples(Vec<Scenario>),
}

impl Conditioning {
    pub fn rule_version(&self) -> Option<u32> {
        match self {
            Conditioning::Rules(r) => Some(r.version),
            _ => None,
        }
    }

    /// Text placed in the rules slot of the inference prompt; `None` selects
    /// the unconditioned template.
    pub fn slot_text(&self) -> Option<String> {
        match self {
            Conditioning::None => None,
            Conditioning::Rules(r) => Some(r.prompt_text()),
            Conditioning::Transcript(d) => Some(if d.is_empty() {
                "(no conversation)".to_string()
            } else {
                d.transcript()
            }),
            Conditioning::Examples(e) => Some(format!("Example scenarios:{}", e.render())),
            Conditioning::LabeledExamples(examples) => {
                let mut out = String::from("Example scenarios with the user's chosen action:");
                for (i, s) in examples.iter().enumerate() {
                    out.push_str(&format!(
                        "\n\nExample {}:\n  Environment: {}\n  User Request: \"{}\"\n  Possible Actions:\n",
                        i + 1,
                        s.environment,
                        s.request
                    ));
                    for c in &s.candidates {
                        out.push_str(&format!("    {}. {}\n", c.index, c.text));
                    }
                    if let Some(text) = s.preferred_text() {
                        out.push_str(&format!("  Correct action: {text}"));
                    }
                }
                Some(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub scenario_id: String,
    /// Original candidate indices in the order they were shown.
    pub shown_order: Vec<usize>,
    pub raw_action: Option<usize>,
    pub chosen_original_index: Option<usize>,
    pub raw_block: Option<DecisionBlock>,
    pub correct: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule_version: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Decision {
    pub fn is_correct(&self) -> bool {
        self.correct == Some(true)
    }
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub decisions: Vec<Decision>,
    pub repaired: bool,
    pub parse_failures: usize,
}

impl BatchOutcome {
    pub fn accuracy(&self) -> f64 {
        accuracy(&self.decisions)
    }
}

/// Fraction of decisions marked correct; 0 for an empty slice.
pub fn accuracy(decisions: &[Decision]) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    decisions.iter().filter(|d| d.is_correct()).count() as f64 / decisions.len() as f64
}

#[derive(Debug, Clone, Default)]
pub struct StreamResult {
    pub decisions: Vec<Decision>,
    pub batch_accuracies: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub parse_failures: usize,
}

impl StreamResult {
    pub fn accuracy(&self) -> f64 {
        accuracy(&self.decisions)
    }
}

#[derive(Clone)]
pub struct InferenceEngine {
    gateway: Gateway,
    templates: Arc<TemplateSet>,
}

impl InferenceEngine {
    pub fn new(gateway: Gateway, templates: Arc<TemplateSet>) -> Self {
        InferenceEngine { gateway, templates }
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn permutation(&self, s: &Scenario) -> Vec<usize> {
        deterministic_shuffle(&s.id, self.gateway.model_id(), s.candidates.len())
    }

    pub fn render_prompt(
        &self,
        scenarios: &[Scenario],
        perms: &[Vec<usize>],
        conditioning: &Conditioning,
    ) -> Result<String> {
        let mut blocks = String::new();
        for (i, (s, perm)) in scenarios.iter().zip(perms).enumerate() {
            let actions = perm
                .iter()
                .enumerate()
                .map(|(p, &orig)| {
                    let text = s.candidate(orig).map(|c| c.text.as_str()).unwrap_or("");
                    format!("  {}. {}", p + 1, text)
                })
                .collect::<Vec<_>>()
                .join("\n");
            let idx = (i + 1).to_string();
            let request = format!("\"{}\"", s.request);
            blocks.push_str(&self.templates.render(
                TemplateName::InferenceScenario,
                &[
                    ("idx", &idx),
                    ("env", &s.environment),
                    ("request", &request),
                    ("actions", &actions),
                ],
            )?);
            blocks.push('\n');
        }
        let count = scenarios.len().to_string();
        match conditioning.slot_text() {
            Some(rules) => self.templates.render(
                TemplateName::InferenceBatch,
                &[("rules", &rules), ("count", &count), ("scenarios", &blocks)],
            ),
            None => self.templates.render(
                TemplateName::InferenceZeroShot,
                &[("count", &count), ("scenarios", &blocks)],
            ),
        }
    }

    /// One batched selection call (plus at most one repair re-prompt).
    ///
    /// Scenarios whose block cannot be parsed after the repair are returned
    /// as incorrect decisions carrying an error note.
    pub fn select_actions(
        &self,
        scenarios: &[Scenario],
        conditioning: &Conditioning,
        tag: &str,
    ) -> Result<BatchOutcome> {
        if scenarios.is_empty() {
            return Err(Error::Precondition("empty inference batch".into()));
        }
        let perms: Vec<Vec<usize>> = scenarios.iter().map(|s| self.permutation(s)).collect();
        let prompt = self.render_prompt(scenarios, &perms, conditioning)?;
        let n = scenarios.len();

        let first = self.gateway.ask(tag, prompt.clone())?;
        let mut blocks = valid_blocks(&first.text, n, &perms);
        let mut repaired = false;
        if blocks.iter().any(|b| b.is_err()) {
            repaired = true;
            let second = self.gateway.ask(tag, format!("{prompt}{REPAIR_SUFFIX}"))?;
            let retry = valid_blocks(&second.text, n, &perms);
            for (slot, again) in blocks.iter_mut().zip(retry) {
                if slot.is_err() && again.is_ok() {
                    *slot = again;
                }
            }
        }

        let version = conditioning.rule_version();
        let mut parse_failures = 0;
        let decisions = scenarios
            .iter()
            .zip(perms)
            .zip(blocks)
            .map(|((s, perm), block)| match block {
                Ok(b) => {
                    let orig = perm[b.action - 1];
                    Decision {
                        scenario_id: s.id.clone(),
                        raw_action: Some(b.action),
                        chosen_original_index: Some(orig),
                        correct: s.preferred.map(|p| p == orig),
                        raw_block: Some(b),
                        shown_order: perm,
                        rule_version: version,
                        error: None,
                    }
                }
                Err(msg) => {
                    parse_failures += 1;
                    Decision {
                        scenario_id: s.id.clone(),
                        shown_order: perm,
                        raw_action: None,
                        chosen_original_index: None,
                        raw_block: None,
                        correct: s.preferred.map(|_| false),
                        rule_version: version,
                        error: Some(msg),
                    }
                }
            })
            .collect();
        Ok(BatchOutcome {
            decisions,
            repaired,
            parse_failures,
        })
    }

    /// Runs every scenario in batches of `batch_size` (the last batch may be short).
    pub fn evaluate_stream(
        &self,
        scenarios: &[Scenario],
        conditioning: &Conditioning,
        batch_size: usize,
    ) -> Result<StreamResult> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(s) = scenarios.iter().find(|s| s.preferred.is_none()) {
            return Err(Error::Config(format!("scenario {} is unlabeled", s.id)));
        }
        let mut out = StreamResult::default();
        for batch in scenarios.chunks(batch_size) {
            let outcome = self.select_actions(batch, conditioning, tags::INFERENCE)?;
            out.batch_accuracies.push(outcome.accuracy());
            out.batch_sizes.push(batch.len());
            out.parse_failures += outcome.parse_failures;
            out.decisions.extend(outcome.decisions);
        }
        Ok(out)
    }
}

fn valid_blocks(
    text: &str,
    n: usize,
    perms: &[Vec<usize>],
) -> Vec<std::result::Result<DecisionBlock, String>> {
    let (mut blocks, mut failures) = parse_decision_blocks_partial(text, n);
    (1..=n)
        .map(|ordinal| match blocks.remove(&ordinal) {
            Some(b) if b.action >= 1 && b.action <= perms[ordinal - 1].len() => Ok(b),
            Some(b) => Err(format!("action {} out of range", b.action)),
            None => Err(failures
                .remove(&ordinal)
                .unwrap_or_else(|| "missing block".to_string())),
        })
        .collect()
}
