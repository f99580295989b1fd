//! Shared vocabulary: scenarios, candidate actions, rule sets, dialogues and
//! ground-truth preference profiles.
//!
//! Candidate indices are 1-based everywhere, matching the `Action: <n>`
//! numbering the model sees in prompts.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution tier of a test scenario relative to the elicitation task family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    #[serde(alias = "in-distribution", alias = "in_dist", alias = "id")]
    InDistribution,
    #[serde(alias = "OOD", alias = "out_of_distribution")]
    Ood,
    #[default]
    Unknown,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::InDistribution => "in_distribution",
            Tier::Ood => "ood",
            Tier::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCandidate {
    pub index: usize,
    pub text: String,
}

/// One ambiguous decision instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ScenarioRecord", into = "ScenarioRecord")]
pub struct Scenario {
    pub id: String,
    pub environment: String,
    pub request: String,
    pub candidates: Vec<ActionCandidate>,
    /// 1-based index of the preferred action, when labeled.
    pub preferred: Option<usize>,
    pub tier: Tier,
}

/// Canonical on-disk shape of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioRecord {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    id: String,
    environment: String,
    request: String,
    candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preferred: Option<usize>,
    #[serde(default)]
    tier: Tier,
}

impl From<ScenarioRecord> for Scenario {
    fn from(r: ScenarioRecord) -> Self {
        Scenario {
            id: r.id,
            environment: r.environment,
            request: r.request,
            candidates: candidates_from_texts(r.candidates),
            preferred: r.preferred,
            tier: r.tier,
        }
    }
}

impl From<Scenario> for ScenarioRecord {
    fn from(s: Scenario) -> Self {
        ScenarioRecord {
            id: s.id,
            environment: s.environment,
            request: s.request,
            candidates: s.candidates.into_iter().map(|c| c.text).collect(),
            preferred: s.preferred,
            tier: s.tier,
        }
    }
}

pub fn candidates_from_texts<I, S>(texts: I) -> Vec<ActionCandidate>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| ActionCandidate {
            index: i + 1,
            text: t.into(),
        })
        .collect()
}

impl Scenario {
    pub fn new<S: Into<String>>(
        id: impl Into<String>,
        environment: impl Into<String>,
        request: impl Into<String>,
        candidates: impl IntoIterator<Item = S>,
        preferred: Option<usize>,
    ) -> Self {
        Scenario {
            id: id.into(),
            environment: environment.into(),
            request: request.into(),
            candidates: candidates_from_texts(candidates),
            preferred,
            tier: Tier::Unknown,
        }
    }

    pub fn with_tier(mut self, tier: Tier) -> Self {
        self.tier = tier;
        self
    }

    pub fn candidate(&self, index: usize) -> Option<&ActionCandidate> {
        self.candidates.iter().find(|c| c.index == index)
    }

    pub fn preferred_text(&self) -> Option<&str> {
        self.preferred
            .and_then(|p| self.candidate(p))
            .map(|c| c.text.as_str())
    }

    /// Retrieval context used by memory-based baselines.
    pub fn context(&self) -> String {
        format!("{} {}", self.environment, self.request)
    }
}

/// Returns every invariant violation of `s`; empty iff the scenario is well formed.
pub fn validate_scenario(s: &Scenario) -> Vec<String> {
    let mut out = Vec::new();
    if s.candidates.is_empty() {
        out.push("candidates empty".to_string());
    }
    let mut seen = HashSet::new();
    for c in &s.candidates {
        if c.index == 0 {
            out.push(format!("candidate index {} below 1", c.index));
        }
        if !seen.insert(c.index) {
            out.push(format!("duplicate candidate index {}", c.index));
        }
        if c.text.trim().is_empty() {
            out.push(format!("candidate {} text empty", c.index));
        }
    }
    if let Some(p) = s.preferred {
        if !s.candidates.iter().any(|c| c.index == p) {
            out.push("preferred out of range".to_string());
        }
    }
    out
}

/// A scenario as shown to the model during elicitation: the preferred label
/// does not exist on this type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleScenario {
    pub id: String,
    pub environment: String,
    pub request: String,
    pub candidates: Vec<ActionCandidate>,
    #[serde(default)]
    pub tier: Tier,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleSet {
    scenarios: Vec<ExampleScenario>,
}

impl ExampleSet {
    pub fn scenarios(&self) -> &[ExampleScenario] {
        &self.scenarios
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Knowledge-base rendering used by the elicitation and question prompts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            out.push_str(&format!(
                "\nScenario {}:\n  Environment: {}\n  User Request: \"{}\"\n  Possible Actions:\n",
                i + 1,
                s.environment,
                s.request
            ));
            for c in &s.candidates {
                out.push_str(&format!("    {}. {}\n", c.index, c.text));
            }
        }
        out
    }
}

/// Removes the preferred label from every scenario.
pub fn strip_answers(scenarios: &[Scenario]) -> ExampleSet {
    ExampleSet {
        scenarios: scenarios
            .iter()
            .map(|s| ExampleScenario {
                id: s.id.clone(),
                environment: s.environment.clone(),
                request: s.request.clone(),
                candidates: s.candidates.clone(),
                tier: s.tier,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleOrigin {
    Elicited,
    CriticUpdate,
    Contradicted,
    Empty,
    External,
}

/// Versioned numbered list of natural-language preference rules.
///
/// Rules are stored without their list numerals; numbering is derived when
/// rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    rules: Vec<String>,
    pub version: u32,
    pub origin: RuleOrigin,
    pub source_model: String,
}

impl RuleSet {
    pub fn new(
        rules: Vec<String>,
        version: u32,
        origin: RuleOrigin,
        source_model: impl Into<String>,
    ) -> Result<Self> {
        let rules: Vec<String> = rules.into_iter().map(|r| r.trim().to_string()).collect();
        if let Some(pos) = rules.iter().position(|r| r.is_empty()) {
            return Err(Error::Config(format!("rule {} is empty", pos + 1)));
        }
        if let Some(pos) = rules.iter().position(|r| r.contains('\n')) {
            return Err(Error::Config(format!(
                "rule {} spans multiple lines",
                pos + 1
            )));
        }
        Ok(RuleSet {
            rules,
            version,
            origin,
            source_model: source_model.into(),
        })
    }

    pub fn empty() -> Self {
        RuleSet {
            rules: Vec::new(),
            version: 0,
            origin: RuleOrigin::Empty,
            source_model: String::new(),
        }
    }

    pub fn rules(&self) -> &[String] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn to_numbered_text(&self) -> String {
        self.rules
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{}. {}\n", i + 1, r))
            .collect()
    }

    /// Rendering for prompt slots; an empty set renders as a placeholder line.
    pub fn prompt_text(&self) -> String {
        if self.rules.is_empty() {
            "(no rules yet)".to_string()
        } else {
            self.to_numbered_text().trim_end().to_string()
        }
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Agent,
    User,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Agent => "agent",
            Role::User => "user",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    /// Logical timestamp: position of the turn in the session.
    pub at: u64,
}

/// Ordered dialogue; roles alternate starting with the agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueHistory {
    turns: Vec<Turn>,
}

impl DialogueHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn last_role(&self) -> Option<Role> {
        self.turns.last().map(|t| t.role)
    }

    pub fn push(&mut self, role: Role, text: impl Into<String>) -> Result<()> {
        let expected = match self.last_role() {
            None | Some(Role::User) => Role::Agent,
            Some(Role::Agent) => Role::User,
        };
        if role != expected {
            return Err(Error::Protocol(format!(
                "expected a {expected} turn, got {role}"
            )));
        }
        let at = self.turns.len() as u64;
        self.turns.push(Turn {
            role,
            text: text.into(),
            at,
        });
        Ok(())
    }

    /// Completed (question, answer) pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.turns
            .chunks(2)
            .filter(|c| c.len() == 2)
            .map(|c| (c[0].text.as_str(), c[1].text.as_str()))
    }

    pub fn question_count(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::Agent).count()
    }

    /// Role-prefixed plain-text transcript.
    pub fn transcript(&self) -> String {
        self.turns
            .iter()
            .map(|t| format!("{}: {}", t.role, t.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceDimension {
    pub name: String,
    pub value: String,
    /// Keywords that identify a question about this dimension.
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub notes: String,
    /// Value used by the adversarial scripted simulator; defaults to a negation of `value`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opposite: Option<String>,
}

/// Ground-truth latent preferences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    try_from = "Vec<PreferenceDimension>",
    into = "Vec<PreferenceDimension>"
)]
pub struct PreferenceProfile {
    dimensions: Vec<PreferenceDimension>,
}

impl TryFrom<Vec<PreferenceDimension>> for PreferenceProfile {
    type Error = Error;

    fn try_from(dimensions: Vec<PreferenceDimension>) -> Result<Self> {
        PreferenceProfile::new(dimensions)
    }
}

impl From<PreferenceProfile> for Vec<PreferenceDimension> {
    fn from(p: PreferenceProfile) -> Self {
        p.dimensions
    }
}

impl PreferenceProfile {
    pub fn new(dimensions: Vec<PreferenceDimension>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &dimensions {
            if !seen.insert(d.name.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate dimension name `{}`",
                    d.name
                )));
            }
        }
        Ok(PreferenceProfile { dimensions })
    }

    pub fn dimensions(&self) -> &[PreferenceDimension] {
        &self.dimensions
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Structured natural-language description used to fill simulator prompts.
    pub fn describe(&self) -> String {
        self.dimensions
            .iter()
            .map(|d| {
                if d.notes.is_empty() {
                    format!("- {}: {}", d.name, d.value)
                } else {
                    format!("- {}: {} ({})", d.name, d.value, d.notes)
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Parses a scenario file: either a JSON array or newline-delimited objects.
/// Scenarios without an id get `<prefix>-<ordinal>`.
pub fn parse_scenarios(text: &str, id_prefix: &str) -> Result<Vec<Scenario>> {
    let trimmed = text.trim_start();
    let mut scenarios: Vec<Scenario> = if trimmed.starts_with('[') {
        from_json_with_path(trimmed, "")?
    } else {
        trimmed
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| from_json_with_path(l, &format!("line {}: ", n + 1)))
            .collect::<Result<_>>()?
    };
    for (i, s) in scenarios.iter_mut().enumerate() {
        if s.id.is_empty() {
            s.id = format!("{}-{:03}", id_prefix, i + 1);
        }
    }
    Ok(scenarios)
}

/// Deserializes JSON, naming the offending field (e.g. `[3].candidates`) on failure.
pub fn from_json_with_path<T: serde::de::DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Parse {
        message: format!("{context}field `{}`: {}", e.path(), e.inner()),
        ordinal: None,
    })
}

pub fn load_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let prefix = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario");
    let scenarios = parse_scenarios(&text, prefix)
        .map_err(|e| Error::forge(path.display().to_string(), e.to_string()))?;
    for s in &scenarios {
        let problems = validate_scenario(s);
        if !problems.is_empty() {
            return Err(Error::forge(
                path.display().to_string(),
                format!("scenario {}: {}", s.id, problems.join(", ")),
            ));
        }
    }
    Ok(scenarios)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drink(preferred: Option<usize>) -> Scenario {
        Scenario::new(
            "d1",
            "Kitchen with iced tea and hot coffee",
            "Bring me a drink",
            ["Pour iced tea", "Pour hot coffee", "Pour cola"],
            preferred,
        )
    }

    #[test]
    fn strip_answers_preserves_count_and_candidates() {
        let labeled: Vec<_> = (0..10).map(|_| drink(Some(2))).collect();
        let set = strip_answers(&labeled);
        assert_eq!(set.len(), 10);
        assert_eq!(set.scenarios()[0].candidates, labeled[0].candidates);
        assert!(strip_answers(&[]).is_empty());
    }

    #[test]
    fn stripped_examples_serialize_without_label() {
        let set = strip_answers(&[drink(Some(2))]);
        let json = serde_json::to_string(&set).unwrap();
        assert!(!json.contains("preferred"));
    }

    #[test]
    fn validation_reports() {
        assert!(validate_scenario(&drink(Some(1))).is_empty());
        let mut empty = drink(None);
        empty.candidates.clear();
        assert_eq!(validate_scenario(&empty), vec!["candidates empty"]);
        assert_eq!(
            validate_scenario(&drink(Some(5))),
            vec!["preferred out of range"]
        );
    }

    #[test]
    fn dialogue_alternates_from_agent() {
        let mut d = DialogueHistory::new();
        assert!(d.push(Role::User, "hi").is_err());
        d.push(Role::Agent, "Hot or cold?").unwrap();
        assert!(d.push(Role::Agent, "again").is_err());
        d.push(Role::User, "Cold, definitely.").unwrap();
        assert_eq!(
            d.pairs().collect::<Vec<_>>(),
            vec![("Hot or cold?", "Cold, definitely.")]
        );
        assert_eq!(
            d.transcript(),
            "agent: Hot or cold?\nuser: Cold, definitely."
        );
    }

    #[test]
    fn profile_rejects_duplicate_names() {
        let dim = PreferenceDimension {
            name: "temp".into(),
            value: "cold".into(),
            synonyms: vec![],
            notes: String::new(),
            opposite: None,
        };
        assert!(PreferenceProfile::new(vec![dim.clone(), dim]).is_err());
    }

    #[test]
    fn scenario_file_accepts_array_and_ndjson() {
        let a = r#"[{"environment":"e","request":"r","candidates":["x","y"],"preferred":2,"tier":"ood"}]"#;
        let n = "{\"environment\":\"e\",\"request\":\"r\",\"candidates\":[\"x\",\"y\"],\"preferred\":2,\"tier\":\"ood\"}\n";
        let sa = parse_scenarios(a, "f").unwrap();
        let sn = parse_scenarios(n, "f").unwrap();
        assert_eq!(sa, sn);
        assert_eq!(sa[0].id, "f-001");
        assert_eq!(sa[0].tier, Tier::Ood);
        let missing = r#"[{"environment":"e","request":"r","candidates":["x"]}]"#;
        assert_eq!(
            parse_scenarios(missing, "f").unwrap()[0].tier,
            Tier::Unknown
        );
    }

    #[test]
    fn rule_set_rejects_blank_rules() {
        assert!(RuleSet::new(vec![" ".into()], 1, RuleOrigin::Elicited, "m").is_err());
        let r = RuleSet::new(
            vec!["Serve drinks cold.".into()],
            1,
            RuleOrigin::Elicited,
            "m",
        )
        .unwrap();
        assert_eq!(r.to_numbered_text(), "1. Serve drinks cold.\n");
    }
}
