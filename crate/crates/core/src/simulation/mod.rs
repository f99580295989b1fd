//! Synthetic users and deterministic model doubles.

mod heuristic;
mod mock;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use heuristic::{is_vague, load_topics, HeuristicModel, Topic};
pub use mock::{install_mock, MockProvider, MockRuleSpec, MockScript};

use crate::elicitation::{ChannelKind, UserChannel};
use crate::error::Result;
use crate::gateway::{tags, tokens, ChatMessage, Gateway};
use crate::model::{PreferenceDimension, PreferenceProfile};
use crate::prompts::{TemplateName, TemplateSet};

pub const NO_PREFERENCE: &str = "no strong preference";
pub const VAGUE_ANSWER: &str = "It depends on my mood";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stance {
    Cooperative,
    Adversarial,
}

/// A user persona answering from a ground-truth profile, either through a
/// chat model or by deterministic keyword lookup.
#[derive(Debug, Clone)]
pub struct SimulatedUser {
    profile: PreferenceProfile,
    stance: Stance,
    backend: Option<(Gateway, TemplateSet)>,
    log: Vec<(String, String)>,
}

impl SimulatedUser {
    /// Keyword-lookup simulator; never calls a model.
    pub fn scripted(profile: PreferenceProfile, stance: Stance) -> Self {
        SimulatedUser {
            profile,
            stance,
            backend: None,
            log: Vec::new(),
        }
    }

    /// Persona driven by a chat model under the cooperative or adversarial system prompt.
    pub fn llm(
        profile: PreferenceProfile,
        stance: Stance,
        gateway: Gateway,
        templates: TemplateSet,
    ) -> Self {
        SimulatedUser {
            profile,
            stance,
            backend: Some((gateway, templates)),
            log: Vec::new(),
        }
    }

    pub fn stance(&self) -> Stance {
        self.stance
    }

    pub fn turns(&self) -> &[(String, String)] {
        &self.log
    }

    /// Dimension whose synonyms best match the question; earlier dimensions win ties.
    pub fn match_dimension(&self, question: &str) -> Option<&PreferenceDimension> {
        let lower = question.to_lowercase();
        let words: BTreeSet<String> = tokens(question).collect();
        let mut best: Option<(&PreferenceDimension, usize)> = None;
        for d in self.profile.dimensions() {
            let hits = d
                .synonyms
                .iter()
                .map(|s| s.to_lowercase())
                .filter(|s| {
                    if s.contains(' ') {
                        lower.contains(s.as_str())
                    } else {
                        words.contains(s) || words.contains(&format!("{s}s"))
                    }
                })
                .count();
            if hits > 0 && best.is_none_or(|(_, b)| hits > b) {
                best = Some((d, hits));
            }
        }
        best.map(|(d, _)| d)
    }

    pub fn answer(&mut self, question: &str) -> Result<String> {
        let reply = match &self.backend {
            None => self.scripted_answer(question),
            Some((gateway, templates)) => {
                let name = match self.stance {
                    Stance::Cooperative => TemplateName::SimCooperative,
                    Stance::Adversarial => TemplateName::SimAdversarial,
                };
                let system = templates
                    .render(name, &[("ground_truth_profile", &self.profile.describe())])?;
                let mut messages = Vec::new();
                for (q, a) in &self.log {
                    messages.push(ChatMessage::user(q.clone()));
                    messages.push(ChatMessage::assistant(a.clone()));
                }
                messages.push(ChatMessage::user(question));
                let req = gateway.request(tags::SIMULATOR, Some(system), messages);
                gateway.complete(&req)?.text.trim().to_string()
            }
        };
        self.log.push((question.to_string(), reply.clone()));
        Ok(reply)
    }

    fn scripted_answer(&self, question: &str) -> String {
        let Some(d) = self.match_dimension(question) else {
            return NO_PREFERENCE.to_string();
        };
        match self.stance {
            Stance::Cooperative => d.value.clone(),
            Stance::Adversarial if self.log.len().is_multiple_of(2) => d
                .opposite
                .clone()
                .unwrap_or_else(|| format!("anything but {}", d.value)),
            Stance::Adversarial => VAGUE_ANSWER.to_string(),
        }
    }
}

impl UserChannel for SimulatedUser {
    fn kind(&self) -> ChannelKind {
        match self.backend {
            None => ChannelKind::ScriptedSimulator,
            Some(_) => ChannelKind::LlmSimulator,
        }
    }

    fn answer(&mut self, question: &str) -> Result<String> {
        SimulatedUser::answer(self, question)
    }
}
