use std::path::Path;
use std::sync::{Arc, Mutex};

use regex::Regex;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::gateway::{
    ChatProvider, ChatRequest, ChatResponse, Gateway, ProviderFault, RetryPolicy,
};

/// One scripted rule as it appears in a script file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRuleSpec {
    #[serde(default)]
    pub tag: Option<String>,
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub regex: Option<String>,
    /// Replies served in order; the last one repeats.
    pub replies: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MockScriptFile {
    #[serde(default)]
    default: String,
    #[serde(default)]
    rules: Vec<MockRuleSpec>,
}

#[derive(Debug)]
struct CompiledRule {
    tag: Option<String>,
    contains: Option<String>,
    regex: Option<Regex>,
    replies: Vec<String>,
}

impl CompiledRule {
    fn matches(&self, req: &ChatRequest, text: &str) -> bool {
        self.tag.as_deref().is_none_or(|t| t == req.tag)
            && self.contains.as_deref().is_none_or(|c| text.contains(c))
            && self.regex.as_ref().is_none_or(|r| r.is_match(text))
    }
}

/// Ordered (matcher, reply) list with a default reply.
///
/// Matchers test the request tag and the full prompt text; the first
/// matching rule answers. Unmatched requests go to the fallback provider
/// when one is set, otherwise to the default reply.
pub struct MockScript {
    rules: Vec<CompiledRule>,
    served: Mutex<Vec<usize>>,
    default: String,
    fallback: Option<Arc<dyn ChatProvider>>,
}

impl std::fmt::Debug for MockScript {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockScript")
            .field("rules", &self.rules.len())
            .field("default", &self.default)
            .field(
                "fallback",
                &self.fallback.as_ref().map(|p| p.model_id().to_string()),
            )
            .finish()
    }
}

impl MockScript {
    pub fn new(default: impl Into<String>) -> Self {
        MockScript {
            rules: Vec::new(),
            served: Mutex::new(Vec::new()),
            default: default.into(),
            fallback: None,
        }
    }

    /// Every call answers `reply`.
    pub fn fixed(reply: impl Into<String>) -> Self {
        Self::new(reply)
    }

    pub fn with_fallback(mut self, provider: Arc<dyn ChatProvider>) -> Self {
        self.fallback = Some(provider);
        self
    }

    pub fn rule(mut self, spec: MockRuleSpec) -> Result<Self> {
        if spec.replies.is_empty() {
            return Err(Error::Config("mock rule needs at least one reply".into()));
        }
        let regex = spec
            .regex
            .as_deref()
            .map(Regex::new)
            .transpose()
            .map_err(|e| Error::Config(format!("mock rule regex: {e}")))?;
        self.rules.push(CompiledRule {
            tag: spec.tag,
            contains: spec.contains,
            regex,
            replies: spec.replies,
        });
        self.served.get_mut().unwrap().push(0);
        Ok(self)
    }

    pub fn on_contains(self, needle: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rule(MockRuleSpec {
            contains: Some(needle.into()),
            replies: vec![reply.into()],
            ..Default::default()
        })
        .expect("literal rule is valid")
    }

    pub fn on_tag(self, tag: &str, replies: Vec<String>) -> Self {
        self.rule(MockRuleSpec {
            tag: Some(tag.to_string()),
            replies,
            ..Default::default()
        })
        .expect("tag rule is valid")
    }

    /// Parses a JSON script: `{"default": "...", "rules": [{"tag", "contains", "regex", "replies"}]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: MockScriptFile = serde_json::from_str(text)?;
        file.rules
            .into_iter()
            .try_fold(MockScript::new(file.default), MockScript::rule)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn reply(&self, req: &ChatRequest) -> std::result::Result<Option<String>, ProviderFault> {
        let text = req.full_text();
        let mut served = self.served.lock().unwrap();
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.matches(req, &text) {
                let n = served[i];
                served[i] += 1;
                return Ok(Some(rule.replies[n.min(rule.replies.len() - 1)].clone()));
            }
        }
        Ok(None)
    }
}

/// Chat provider backed by a [`MockScript`].
#[derive(Debug)]
pub struct MockProvider {
    model_id: String,
    script: MockScript,
}

impl MockProvider {
    pub fn new(model_id: impl Into<String>, script: MockScript) -> Self {
        MockProvider {
            model_id: model_id.into(),
            script,
        }
    }
}

impl ChatProvider for MockProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, req: &ChatRequest) -> std::result::Result<ChatResponse, ProviderFault> {
        let text = match self.script.reply(req)? {
            Some(t) => t,
            None => match &self.script.fallback {
                Some(p) => p.complete(req)?.text,
                None => self.script.default.clone(),
            },
        };
        Ok(ChatResponse {
            text,
            model_id: self.model_id.clone(),
            usage: None,
        })
    }
}

/// Gateway routed entirely to `script`, with no retry delays.
pub fn install_mock(model_id: &str, script: MockScript) -> Gateway {
    Gateway::new(Arc::new(MockProvider::new(model_id, script)))
        .with_retry(RetryPolicy::immediate(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::tags;

    #[test]
    fn default_reply_and_counting() {
        let g = install_mock("m", MockScript::fixed("Action: 1"));
        for _ in 0..3 {
            assert_eq!(
                g.ask(tags::INFERENCE, "anything").unwrap().text,
                "Action: 1"
            );
        }
        g.ask(tags::CRITIC, "x").unwrap();
        assert_eq!(g.ledger_count(None), 4);
        assert_eq!(g.ledger_count(Some(tags::CRITIC)), 1);
    }

    #[test]
    fn rules_match_in_order_and_sequences_repeat_last() {
        let script = MockScript::new("fallback")
            .on_tag(
                tags::ELICITATION,
                vec!["Q1?".into(), "Done. PAUSE: true".into()],
            )
            .on_contains("drink", "Action: 2");
        let g = install_mock("m", script);
        assert_eq!(g.ask(tags::ELICITATION, "drink").unwrap().text, "Q1?");
        assert_eq!(
            g.ask(tags::ELICITATION, "x").unwrap().text,
            "Done. PAUSE: true"
        );
        assert_eq!(
            g.ask(tags::ELICITATION, "x").unwrap().text,
            "Done. PAUSE: true"
        );
        assert_eq!(g.ask(tags::INFERENCE, "a drink").unwrap().text, "Action: 2");
        assert_eq!(g.ask(tags::INFERENCE, "food").unwrap().text, "fallback");
    }

    #[test]
    fn same_sequence_same_responses() {
        let run = || {
            let g = install_mock(
                "m",
                MockScript::from_json(
                    r#"{"default": "d", "rules": [{"regex": "SCENARIO \\d", "replies": ["a", "b"]}]}"#,
                )
                .unwrap(),
            );
            ["SCENARIO 1", "x", "SCENARIO 2", "SCENARIO 3"]
                .iter()
                .map(|p| g.ask(tags::INFERENCE, *p).unwrap().text)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), vec!["a", "d", "b", "b"]);
        assert_eq!(run(), run());
    }

    #[test]
    fn script_file_errors_are_config_errors() {
        assert!(MockScript::from_json(r#"{"rules": [{"replies": []}]}"#).is_err());
        assert!(MockScript::from_json(r#"{"rules": [{"regex": "(", "replies": ["x"]}]}"#).is_err());
    }
}
