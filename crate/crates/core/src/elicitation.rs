//! Bounded interactive elicitation: ask about unresolved preference
//! dimensions until the model signals sufficiency or the question budget
//! runs out, then compile the dialogue into a numbered rule list.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{tags, ChatMessage, Gateway};
use crate::model::{DialogueHistory, ExampleSet, Role, RuleOrigin, RuleSet};
use crate::prompts::{
    parse_dimensions, parse_numbered_rules, parse_pause, TemplateName, TemplateSet, REPAIR_SUFFIX,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    LiveSession,
    ScriptedSimulator,
    LlmSimulator,
}

/// Source of user answers for elicitation and critic questions.
pub trait UserChannel: Send {
    fn kind(&self) -> ChannelKind;
    fn answer(&mut self, question: &str) -> Result<String>;
}

/// Replays a fixed list of answers, then a fallback.
#[derive(Debug, Clone)]
pub struct FixedAnswers {
    answers: VecDeque<String>,
    fallback: String,
    pub asked: Vec<String>,
}

impl FixedAnswers {
    pub fn new<I, S>(answers: I, fallback: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        FixedAnswers {
            answers: answers.into_iter().map(Into::into).collect(),
            fallback: fallback.into(),
            asked: Vec::new(),
        }
    }
}

impl UserChannel for FixedAnswers {
    fn kind(&self) -> ChannelKind {
        ChannelKind::ScriptedSimulator
    }

    fn answer(&mut self, question: &str) -> Result<String> {
        self.asked.push(question.to_string());
        Ok(self
            .answers
            .pop_front()
            .unwrap_or_else(|| self.fallback.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Sufficient,
    BudgetExhausted,
    Synthesized,
}

/// Persisted session event; replaying the sequence rebuilds the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Analysis {
        dimensions: Vec<String>,
    },
    Question {
        text: String,
    },
    Answer {
        text: String,
    },
    Pause {
        text: String,
    },
    BudgetExhausted {
        questions: usize,
    },
    Synthesis {
        rules: Vec<String>,
        source_model: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextStep {
    Question(String),
    Sufficient,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct ElicitationSession {
    examples: ExampleSet,
    budget: usize,
    dialogue: DialogueHistory,
    dimensions: Vec<String>,
    dimensions_fresh: bool,
    status: SessionStatus,
    rules: Option<RuleSet>,
    events: Vec<SessionEvent>,
}

impl ElicitationSession {
    pub fn new(examples: ExampleSet, budget: usize) -> Self {
        ElicitationSession {
            examples,
            budget,
            dialogue: DialogueHistory::new(),
            dimensions: Vec::new(),
            dimensions_fresh: false,
            status: SessionStatus::Active,
            rules: None,
            events: Vec::new(),
        }
    }

    /// Rebuilds a session from its event log without any model calls.
    pub fn replay(examples: ExampleSet, budget: usize, events: &[SessionEvent]) -> Result<Self> {
        let mut s = Self::new(examples, budget);
        for e in events {
            s.apply(e.clone())?;
        }
        Ok(s)
    }

    fn apply(&mut self, event: SessionEvent) -> Result<()> {
        match &event {
            SessionEvent::Analysis { dimensions } => {
                self.dimensions = dimensions.clone();
                self.dimensions_fresh = true;
            }
            SessionEvent::Question { text } => {
                if self.dialogue.question_count() >= self.budget {
                    return Err(Error::Protocol("question exceeds the budget".into()));
                }
                self.dialogue.push(Role::Agent, text.clone())?;
            }
            SessionEvent::Answer { text } => {
                if self.status != SessionStatus::Active {
                    return Err(Error::Protocol("session is not accepting answers".into()));
                }
                self.dialogue.push(Role::User, text.clone())?;
                self.dimensions_fresh = false;
            }
            SessionEvent::Pause { .. } => self.status = SessionStatus::Sufficient,
            SessionEvent::BudgetExhausted { .. } => self.status = SessionStatus::BudgetExhausted,
            SessionEvent::Synthesis {
                rules,
                source_model,
            } => {
                self.rules = Some(RuleSet::new(
                    rules.clone(),
                    1,
                    RuleOrigin::Elicited,
                    source_model.clone(),
                )?);
                self.status = SessionStatus::Synthesized;
            }
        }
        self.events.push(event);
        Ok(())
    }

    pub fn examples(&self) -> &ExampleSet {
        &self.examples
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn dialogue(&self) -> &DialogueHistory {
        &self.dialogue
    }

    pub fn dimensions(&self) -> &[String] {
        &self.dimensions
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn rules(&self) -> Option<&RuleSet> {
        self.rules.as_ref()
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    /// The question awaiting an answer, if any.
    pub fn pending_question(&self) -> Option<&str> {
        match self.dialogue.turns().last() {
            Some(t) if t.role == Role::Agent => Some(&t.text),
            _ => None,
        }
    }

    fn require_active(&self) -> Result<()> {
        if self.status != SessionStatus::Active {
            return Err(Error::Precondition(format!("session is {:?}", self.status)));
        }
        Ok(())
    }
}

/// Runs the model side of elicitation sessions.
#[derive(Debug, Clone)]
pub struct Elicitor {
    gateway: Gateway,
    templates: Arc<TemplateSet>,
}

impl Elicitor {
    pub fn new(gateway: Gateway, templates: Arc<TemplateSet>) -> Self {
        Elicitor { gateway, templates }
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn system_prompt(&self, s: &ElicitationSession) -> Result<String> {
        self.templates.render(
            TemplateName::ElicitationSystem,
            &[
                ("kb", &s.examples.render()),
                ("max_msg", &s.budget.to_string()),
            ],
        )
    }

    /// Refreshes the list of unresolved preference dimensions.
    pub fn analyze_examples<'s>(&self, s: &'s mut ElicitationSession) -> Result<&'s [String]> {
        s.require_active()?;
        let transcript = if s.dialogue.is_empty() {
            "(nothing asked yet)".to_string()
        } else {
            s.dialogue.transcript()
        };
        let prompt = self.templates.render(
            TemplateName::AnalyzeExamples,
            &[("kb", &s.examples.render()), ("transcript", &transcript)],
        )?;
        let reply = self.gateway.ask(tags::ANALYSIS, prompt)?;
        s.apply(SessionEvent::Analysis {
            dimensions: parse_dimensions(&reply.text),
        })?;
        Ok(&s.dimensions)
    }

    /// Asks the model for the next question. The dimension analysis is only
    /// refreshed when an answer arrived since the last one.
    pub fn next_question(&self, s: &mut ElicitationSession) -> Result<NextStep> {
        if s.status == SessionStatus::BudgetExhausted {
            return Ok(NextStep::BudgetExhausted);
        }
        s.require_active()?;
        if s.pending_question().is_some() {
            return Err(Error::Protocol(
                "previous question is still unanswered".into(),
            ));
        }
        if s.dialogue.question_count() >= s.budget {
            s.apply(SessionEvent::BudgetExhausted {
                questions: s.dialogue.question_count(),
            })?;
            return Ok(NextStep::BudgetExhausted);
        }
        if !s.dimensions_fresh {
            self.analyze_examples(s)?;
        }
        let dims = if s.dimensions.is_empty() {
            "(none)".to_string()
        } else {
            s.dimensions
                .iter()
                .map(|d| format!("- {d}"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let turn = self
            .templates
            .render(TemplateName::ElicitationTurn, &[("dimensions", &dims)])?;
        let mut messages = Vec::new();
        let mut opener = String::from("Please start learning my preferences.");
        for (q, a) in s.dialogue.pairs() {
            messages.push(ChatMessage::user(std::mem::take(&mut opener)));
            messages.push(ChatMessage::assistant(q));
            opener = a.to_string();
        }
        messages.push(ChatMessage::user(format!("{opener}\n\n{turn}")));
        let req = self
            .gateway
            .request(tags::ELICITATION, Some(self.system_prompt(s)?), messages);
        let reply = self.gateway.complete(&req)?.text;
        if parse_pause(&reply) {
            s.apply(SessionEvent::Pause { text: reply })?;
            return Ok(NextStep::Sufficient);
        }
        let question = reply.trim().to_string();
        s.apply(SessionEvent::Question {
            text: question.clone(),
        })?;
        Ok(NextStep::Question(question))
    }

    pub fn submit_answer(&self, s: &mut ElicitationSession, answer: &str) -> Result<()> {
        if s.pending_question().is_none() {
            return Err(Error::Protocol("no question is pending".into()));
        }
        s.apply(SessionEvent::Answer {
            text: answer.trim().to_string(),
        })
    }

    /// Compiles the dialogue into rules. The example set rides along in the
    /// system prompt so the rules stay anchored to the task family.
    pub fn synthesize_rules(&self, s: &mut ElicitationSession) -> Result<RuleSet> {
        if !matches!(
            s.status,
            SessionStatus::Sufficient | SessionStatus::BudgetExhausted
        ) {
            return Err(Error::Precondition(format!(
                "cannot synthesize while session is {:?}",
                s.status
            )));
        }
        let transcript = if s.dialogue.is_empty() {
            "(no conversation)".to_string()
        } else {
            s.dialogue.transcript()
        };
        let prompt = self
            .templates
            .render(TemplateName::RulesSynthesis, &[("transcript", &transcript)])?;
        let system = self.system_prompt(s)?;
        let rules = self.numbered_with_repair(tags::SYNTHESIS, Some(system), &prompt)?;
        let rules = RuleSet::new(rules, 1, RuleOrigin::Elicited, self.gateway.model_id())?;
        s.apply(SessionEvent::Synthesis {
            rules: rules.rules().to_vec(),
            source_model: rules.source_model.clone(),
        })?;
        Ok(rules)
    }

    /// Drives a whole session against `channel` and returns the synthesized rules.
    pub fn run(
        &self,
        s: &mut ElicitationSession,
        channel: &mut dyn UserChannel,
    ) -> Result<RuleSet> {
        while let NextStep::Question(q) = self.next_question(s)? {
            let a = channel.answer(&q)?;
            self.submit_answer(s, &a)?;
        }
        self.synthesize_rules(s)
    }

    /// Rewrites every rule as its negation, keeping the count.
    pub fn contradict_rules(&self, rules: &RuleSet) -> Result<RuleSet> {
        if rules.is_empty() {
            return Err(Error::Precondition("no rules to contradict".into()));
        }
        let prompt = self.templates.render(
            TemplateName::ContradictRules,
            &[
                ("count", &rules.len().to_string()),
                ("rules", &rules.prompt_text()),
            ],
        )?;
        let negated = self.numbered_with_repair(tags::CONTRADICTION, None, &prompt)?;
        if negated.len() != rules.len() {
            return Err(Error::Synthesis(format!(
                "expected {} negated rules, got {}",
                rules.len(),
                negated.len()
            )));
        }
        RuleSet::new(
            negated,
            rules.version,
            RuleOrigin::Contradicted,
            self.gateway.model_id(),
        )
    }

    fn numbered_with_repair(
        &self,
        tag: &str,
        system: Option<String>,
        prompt: &str,
    ) -> Result<Vec<String>> {
        let call = |text: String| {
            let req = self
                .gateway
                .request(tag, system.clone(), vec![ChatMessage::user(text)]);
            self.gateway.complete(&req).map(|r| r.text)
        };
        match parse_numbered_rules(&call(prompt.to_string())?) {
            Ok(r) => Ok(r),
            Err(_) => parse_numbered_rules(&call(format!("{prompt}{REPAIR_SUFFIX}"))?)
                .map_err(|e| Error::Synthesis(format!("unparseable rules after repair: {e}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{strip_answers, Scenario};
    use crate::simulation::{install_mock, MockScript};

    fn examples() -> ExampleSet {
        strip_answers(&[Scenario::new(
            "e1",
            "Kitchen at 3pm",
            "Bring me a drink",
            ["Hot coffee", "Iced tea", "Cola"],
            Some(2),
        )])
    }

    fn elicitor(script: MockScript) -> Elicitor {
        Elicitor::new(install_mock("m", script), Arc::new(TemplateSet::builtin()))
    }

    #[test]
    fn pause_ends_session_without_question() {
        let e = elicitor(MockScript::new("- temperature: hot vs cold").on_tag(
            tags::ELICITATION,
            vec!["Hot or cold?".into(), "Got it. PAUSE: true".into()],
        ));
        let mut s = ElicitationSession::new(examples(), 5);
        assert_eq!(
            e.next_question(&mut s).unwrap(),
            NextStep::Question("Hot or cold?".into())
        );
        e.submit_answer(&mut s, "Cold, definitely.").unwrap();
        assert_eq!(e.next_question(&mut s).unwrap(), NextStep::Sufficient);
        assert_eq!(s.status(), SessionStatus::Sufficient);
        assert_eq!(s.dialogue().question_count(), 1);
        // analysis refreshed once per answer, not once per question call
        assert_eq!(e.gateway().ledger_count(Some(tags::ANALYSIS)), 2);
    }

    #[test]
    fn answers_require_a_pending_question() {
        let e = elicitor(MockScript::fixed("Q?"));
        let mut s = ElicitationSession::new(examples(), 3);
        assert!(matches!(
            e.submit_answer(&mut s, "x"),
            Err(Error::Protocol(_))
        ));
        e.next_question(&mut s).unwrap();
        assert!(matches!(e.next_question(&mut s), Err(Error::Protocol(_))));
    }

    #[test]
    fn budget_bounds_questions_and_zero_budget_synthesizes_directly() {
        let e = elicitor(
            MockScript::new("1. X").on_tag(tags::ELICITATION, vec!["Another question?".into()]),
        );
        let mut s = ElicitationSession::new(examples(), 3);
        let mut ch = FixedAnswers::new(Vec::<String>::new(), "cold");
        let rules = e.run(&mut s, &mut ch).unwrap();
        assert_eq!(ch.asked.len(), 3);
        assert_eq!(rules.rules(), ["X"]);
        assert_eq!(rules.origin, RuleOrigin::Elicited);

        let mut zero = ElicitationSession::new(examples(), 0);
        let mut ch = FixedAnswers::new(Vec::<String>::new(), "cold");
        e.run(&mut zero, &mut ch).unwrap();
        assert!(ch.asked.is_empty());
        assert_eq!(zero.status(), SessionStatus::Synthesized);
    }

    #[test]
    fn synthesis_repairs_once_then_fails() {
        let e = elicitor(MockScript::new("Q").on_tag(tags::SYNTHESIS, vec!["just prose".into()]));
        let mut s = ElicitationSession::new(examples(), 0);
        assert_eq!(e.next_question(&mut s).unwrap(), NextStep::BudgetExhausted);
        assert!(matches!(
            e.synthesize_rules(&mut s),
            Err(Error::Synthesis(_))
        ));
        assert_eq!(e.gateway().ledger_count(Some(tags::SYNTHESIS)), 2);
    }

    #[test]
    fn synthesis_sees_examples_and_uses_low_temperature() {
        let e = elicitor(
            MockScript::new("nothing")
                .on_contains("Iced tea", "1. Always serve drinks cold; never hot."),
        );
        let mut s = ElicitationSession::new(examples(), 0);
        e.next_question(&mut s).unwrap();
        let rules = e.synthesize_rules(&mut s).unwrap();
        assert_eq!(rules.rules(), ["Always serve drinks cold; never hot."]);
        assert_eq!(e.gateway().defaults().temperature_for(tags::SYNTHESIS), 0.3);
    }

    #[test]
    fn contradiction_keeps_cardinality() {
        let e = elicitor(MockScript::fixed("1. Always serve drinks hot"));
        let r = RuleSet::new(
            vec!["Always serve drinks cold".into()],
            1,
            RuleOrigin::Elicited,
            "m",
        )
        .unwrap();
        let c = e.contradict_rules(&r).unwrap();
        assert_eq!(c.rules(), ["Always serve drinks hot"]);
        assert_eq!(c.origin, RuleOrigin::Contradicted);
        let two = RuleSet::new(vec!["a".into(), "b".into()], 1, RuleOrigin::Elicited, "m").unwrap();
        assert!(matches!(e.contradict_rules(&two), Err(Error::Synthesis(_))));
        assert!(matches!(
            e.contradict_rules(&RuleSet::empty()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn replay_rebuilds_identical_state() {
        let e = elicitor(MockScript::new("1. Prefer cold.").on_tag(
            tags::ELICITATION,
            vec!["Q1".into(), "Q2".into(), "PAUSE: true".into()],
        ));
        let mut s = ElicitationSession::new(examples(), 5);
        let mut ch = FixedAnswers::new(["cold", "sweet"], "");
        e.run(&mut s, &mut ch).unwrap();
        let r = ElicitationSession::replay(examples(), 5, s.events()).unwrap();
        assert_eq!(r.dialogue(), s.dialogue());
        assert_eq!(r.status(), s.status());
        assert_eq!(r.rules(), s.rules());
        assert_eq!(r.events(), s.events());
    }
}
