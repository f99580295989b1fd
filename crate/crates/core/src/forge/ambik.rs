use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::CounterRng;
use crate::model::{from_json_with_path, Scenario};

const BUILTIN_RULES: &str = include_str!("../../data/ambik_rules.json");
const BUILTIN_DISTRACTORS: &str = include_str!("../../data/distractors.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// Pattern is searched in the action variants.
    Stable,
    /// Pattern is searched in the task text.
    Contextual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnificationRuleSpec {
    pub name: String,
    pub kind: RuleKind,
    pub pattern: String,
    pub preferred: String,
    pub rank: i64,
}

#[derive(Debug, Clone)]
pub struct UnificationRule {
    pub spec: UnificationRuleSpec,
    regex: Regex,
}

impl UnificationRule {
    pub fn compile(spec: UnificationRuleSpec) -> Result<Self> {
        let regex = RegexBuilder::new(&spec.pattern)
            .case_insensitive(true)
            .build()
            .map_err(|e| Error::Config(format!("rule `{}`: {e}", spec.name)))?;
        Ok(UnificationRule { spec, regex })
    }

    pub fn fires(&self, raw: &RawAmbikScenario) -> bool {
        match self.spec.kind {
            RuleKind::Stable => raw.variants.iter().any(|v| self.regex.is_match(v)),
            RuleKind::Contextual => self.regex.is_match(&raw.task_text),
        }
    }
}

/// Rules sorted by ascending rank; file order is irrelevant.
#[derive(Debug, Clone)]
pub struct RuleChain {
    rules: Vec<UnificationRule>,
}

impl RuleChain {
    pub fn new(specs: Vec<UnificationRuleSpec>) -> Result<Self> {
        let mut ranks = HashSet::new();
        for s in &specs {
            if !ranks.insert(s.rank) {
                return Err(Error::Config(format!(
                    "duplicate rank {} (rule `{}`)",
                    s.rank, s.name
                )));
            }
        }
        let mut rules = specs
            .into_iter()
            .map(UnificationRule::compile)
            .collect::<Result<Vec<_>>>()?;
        rules.sort_by_key(|r| r.spec.rank);
        Ok(RuleChain { rules })
    }

    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_RULES, "<builtin>").expect("bundled rule chain is valid")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let specs: Vec<UnificationRuleSpec> =
            from_json_with_path(text, "").map_err(|e| Error::forge(origin, e.to_string()))?;
        Self::new(specs).map_err(|e| Error::forge(origin, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn rules(&self) -> &[UnificationRule] {
        &self.rules
    }

    pub fn specs(&self) -> Vec<UnificationRuleSpec> {
        self.rules.iter().map(|r| r.spec.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAmbikScenario {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub environment: String,
    pub task_text: String,
    #[serde(default)]
    pub variants: Vec<String>,
    pub actions: Vec<String>,
    pub original_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnifyOutcome {
    pub label: String,
    pub rule: Option<String>,
    pub fallback: bool,
}

/// Action naming `item`: an exact case-insensitive match, else the first
/// action containing `item` as a whole phrase.
pub fn find_action<'a>(actions: &'a [String], item: &str) -> Option<&'a String> {
    let lower = item.to_lowercase();
    actions
        .iter()
        .find(|a| a.to_lowercase() == lower)
        .or_else(|| {
            actions
                .iter()
                .find(|a| contains_phrase(&a.to_lowercase(), &lower))
        })
}

/// `needle` occurs in `hay` with no word character on either side.
fn contains_phrase(hay: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    hay.match_indices(needle).any(|(i, m)| {
        !word(hay[..i].chars().next_back()) && !word(hay[i + m.len()..].chars().next())
    })
}

/// First rule (by rank) that fires and whose preferred item is among the
/// actions decides the label; otherwise the original label stands.
pub fn unify_ambik(raw: &RawAmbikScenario, chain: &RuleChain) -> UnifyOutcome {
    for rule in &chain.rules {
        if !rule.fires(raw) {
            continue;
        }
        if let Some(action) = find_action(&raw.actions, &rule.spec.preferred) {
            return UnifyOutcome {
                label: action.clone(),
                rule: Some(rule.spec.name.clone()),
                fallback: false,
            };
        }
    }
    UnifyOutcome {
        label: raw.original_label.clone(),
        rule: None,
        fallback: true,
    }
}

/// Canonical scenario labeled with `label`.
pub fn to_scenario(raw: &RawAmbikScenario, label: &str) -> Result<Scenario> {
    let lower = label.to_lowercase();
    let idx = raw
        .actions
        .iter()
        .position(|a| a.to_lowercase() == lower)
        .ok_or_else(|| {
            Error::forge(&raw.id, format!("label `{label}` is not among the actions"))
        })?;
    Ok(Scenario::new(
        raw.id.clone(),
        raw.environment.clone(),
        raw.task_text.clone(),
        raw.actions.clone(),
        Some(idx + 1),
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistractorDictionary(pub BTreeMap<String, Vec<String>>);

impl DistractorDictionary {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_DISTRACTORS).expect("bundled distractors are valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        from_json_with_path(&text, "")
            .map_err(|e| Error::forge(path.display().to_string(), e.to_string()))
    }
}

/// Builds a candidate list for a scenario that has none: the preferred item
/// plus two or three distractors of `category`, deterministically chosen and
/// ordered from the scenario id. Items missing from the environment
/// description are appended to it. The request text is left untouched.
pub fn inject_variants(
    raw: &RawAmbikScenario,
    category: &str,
    preferred: &str,
    dict: &DistractorDictionary,
) -> Result<Scenario> {
    let pool: Vec<&String> = dict
        .0
        .get(category)
        .into_iter()
        .flatten()
        .filter(|d| !d.eq_ignore_ascii_case(preferred))
        .collect();
    if pool.len() < 2 {
        return Err(Error::forge(
            &raw.id,
            format!(
                "category `{category}` has {} distractors, need at least 2",
                pool.len()
            ),
        ));
    }
    let mut rng = CounterRng::from_key(&format!("inject|{}", raw.id));
    let want = if pool.len() >= 3 {
        2 + rng.below(2) as usize
    } else {
        2
    };
    let mut pool = pool;
    for i in (1..pool.len()).rev() {
        pool.swap(i, rng.below(i as u64 + 1) as usize);
    }
    let mut items: Vec<String> = std::iter::once(preferred.to_string())
        .chain(pool.into_iter().take(want).cloned())
        .collect();
    for i in (1..items.len()).rev() {
        items.swap(i, rng.below(i as u64 + 1) as usize);
    }
    let mut environment = raw.environment.clone();
    for item in &items {
        if !environment.to_lowercase().contains(&item.to_lowercase()) {
            environment.push_str(", ");
            environment.push_str(item);
        }
    }
    let preferred_idx = items
        .iter()
        .position(|i| i == preferred)
        .expect("preferred inserted")
        + 1;
    Ok(Scenario::new(
        raw.id.clone(),
        environment,
        raw.task_text.clone(),
        items,
        Some(preferred_idx),
    ))
}
