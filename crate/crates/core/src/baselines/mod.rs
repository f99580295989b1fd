//! Comparison methods: unconditioned and in-context selection, summarized
//! rules from labeled examples, open-ended breadth-first questioning, and a
//! retrieval memory of induced preferences.

mod cipher;

use serde::{Deserialize, Serialize};

pub use cipher::{
    levenshtein, levenshtein_similarity, Cipher, CipherEntry, CipherMemory, CipherRun,
    RetrievalMode, DEFAULT_CORRECTION_BUDGET, DEFAULT_TOP_K,
};

use crate::elicitation::UserChannel;
use crate::error::{Error, Result};
use crate::gateway::{tags, Gateway};
use crate::inference::{Conditioning, InferenceEngine, StreamResult};
use crate::model::{DialogueHistory, ExampleSet, Role, RuleOrigin, RuleSet, Scenario};
use crate::prompts::{parse_numbered_rules, TemplateName, TemplateSet, REPAIR_SUFFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ZeroShot,
    Icl,
    IclAnswers,
    Tidybot,
    Gate,
    CipherLevenshtein,
    CipherCosine,
    Rules,
    Adaptive,
}

impl Method {
    pub const ALL: &'static [Method] = &[
        Method::ZeroShot,
        Method::Icl,
        Method::IclAnswers,
        Method::Tidybot,
        Method::Gate,
        Method::CipherLevenshtein,
        Method::CipherCosine,
        Method::Rules,
        Method::Adaptive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ZeroShot => "zero_shot",
            Method::Icl => "icl",
            Method::IclAnswers => "icl_answers",
            Method::Tidybot => "tidybot",
            Method::Gate => "gate",
            Method::CipherLevenshtein => "cipher_levenshtein",
            Method::CipherCosine => "cipher_cosine",
            Method::Rules => "rules",
            Method::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn zero_shot(
    engine: &InferenceEngine,
    scenarios: &[Scenario],
    batch_size: usize,
) -> Result<StreamResult> {
    engine.evaluate_stream(scenarios, &Conditioning::None, batch_size)
}

/// Conditions on example scenarios without their answers.
pub fn icl(
    engine: &InferenceEngine,
    scenarios: &[Scenario],
    examples: &ExampleSet,
    batch_size: usize,
) -> Result<StreamResult> {
    if examples.is_empty() {
        return Err(Error::Precondition(
            "in-context baseline needs examples".into(),
        ));
    }
    engine.evaluate_stream(
        scenarios,
        &Conditioning::Examples(examples.clone()),
        batch_size,
    )
}

/// Conditions on example scenarios together with their correct actions.
pub fn icl_answers(
    engine: &InferenceEngine,
    scenarios: &[Scenario],
    labeled: &[Scenario],
    batch_size: usize,
) -> Result<StreamResult> {
    require_labeled(labeled)?;
    engine.evaluate_stream(
        scenarios,
        &Conditioning::LabeledExamples(labeled.to_vec()),
        batch_size,
    )
}

fn require_labeled(examples: &[Scenario]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Precondition("labeled examples required".into()));
    }
    if let Some(s) = examples.iter().find(|s| s.preferred.is_none()) {
        return Err(Error::Precondition(format!(
            "example {} is unlabeled",
            s.id
        )));
    }
    Ok(())
}

/// Summarizes labeled examples into a rule set in a single call; no user interaction.
pub fn tidybot_summarize(
    gateway: &Gateway,
    templates: &TemplateSet,
    labeled: &[Scenario],
) -> Result<RuleSet> {
    require_labeled(labeled)?;
    let mut examples = String::new();
    for (i, s) in labeled.iter().enumerate() {
        examples.push_str(&format!(
            "\nExample {}:\n  Environment: {}\n  User Request: \"{}\"\n  Possible Actions:\n",
            i + 1,
            s.environment,
            s.request
        ));
        for c in &s.candidates {
            examples.push_str(&format!("    {}. {}\n", c.index, c.text));
        }
        examples.push_str(&format!(
            "  Preferred action: {}\n",
            s.preferred_text().unwrap_or_default()
        ));
    }
    let prompt = templates.render(TemplateName::TidybotSummarize, &[("examples", &examples)])?;
    let first = gateway.ask(tags::SUMMARIZE, prompt.clone())?.text;
    let rules = match parse_numbered_rules(&first) {
        Ok(r) => r,
        Err(_) => parse_numbered_rules(
            &gateway
                .ask(tags::SUMMARIZE, format!("{prompt}{REPAIR_SUFFIX}"))?
                .text,
        )
        .map_err(|e| Error::Synthesis(format!("unparseable summary: {e}")))?,
    };
    RuleSet::new(rules, 1, RuleOrigin::External, gateway.model_id())
}

pub const GATE_TURN_BUDGETS: [usize; 2] = [5, 15];

/// Open-ended breadth-first questioning; the transcript itself is the
/// conditioning, no rules are compiled.
pub fn gate_elicit(
    gateway: &Gateway,
    templates: &TemplateSet,
    examples: &ExampleSet,
    channel: &mut dyn UserChannel,
    turn_budget: usize,
) -> Result<DialogueHistory> {
    if !GATE_TURN_BUDGETS.contains(&turn_budget) {
        return Err(Error::Config(format!(
            "turn budget must be 5 or 15, got {turn_budget}"
        )));
    }
    let rendered = if examples.is_empty() {
        "(none)".to_string()
    } else {
        examples.render()
    };
    let mut history = DialogueHistory::new();
    for _ in 0..turn_budget {
        let transcript = if history.is_empty() {
            "(none yet)".to_string()
        } else {
            history.transcript()
        };
        let prompt = templates.render(
            TemplateName::GateQuestion,
            &[("examples", &rendered), ("transcript", &transcript)],
        )?;
        let question = gateway
            .ask(tags::GATE_QUESTION, prompt)?
            .text
            .trim()
            .to_string();
        history.push(Role::Agent, question.clone())?;
        let answer = channel.answer(&question)?;
        history.push(Role::User, answer)?;
    }
    Ok(history)
}

pub fn gate_evaluate(
    engine: &InferenceEngine,
    scenarios: &[Scenario],
    transcript: &DialogueHistory,
    batch_size: usize,
) -> Result<StreamResult> {
    engine.evaluate_stream(
        scenarios,
        &Conditioning::Transcript(transcript.clone()),
        batch_size,
    )
}
