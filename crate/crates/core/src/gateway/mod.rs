//! Provider-agnostic chat completion and embedding access with call accounting.
//!
//! Every call that returns (successfully or after exhausting retries) is
//! appended exactly once to the shared [`CallLedger`]. The ledger is the
//! source for the `C` term of the efficiency score.

mod embed;
mod http;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embed::{cosine, tokens, HashedBagOfWords};
pub use http::OpenAiCompatible;

/// Purpose labels attached to every gateway call.
pub mod tags {
    pub const ELICITATION: &str = "elicitation";
    pub const ANALYSIS: &str = "analysis";
    pub const SYNTHESIS: &str = "synthesis";
    pub const CONTRADICTION: &str = "contradiction";
    pub const INFERENCE: &str = "inference";
    pub const VERIFICATION: &str = "verification";
    pub const CRITIC: &str = "critic";
    pub const SUMMARIZE: &str = "summarize";
    pub const GATE_QUESTION: &str = "gate_question";
    pub const CIPHER_SELECT: &str = "cipher_select";
    pub const CIPHER_AGGREGATE: &str = "cipher_aggregate";
    pub const CIPHER_INDUCE: &str = "cipher_induce";
    pub const SIMULATOR: &str = "simulator";
    pub const EMBED: &str = "embed";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::Config("chat request has no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// All text the provider will see, concatenated. Used by mocks and audits.
    pub fn full_text(&self) -> String {
        let mut out = self.system.clone().unwrap_or_default();
        for m in &self.messages {
            out.push('\n');
            out.push_str(&m.text);
        }
        out
    }

    pub fn last_user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .map(|m| m.text.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub model_id: String,
    pub usage: Option<Usage>,
}

/// Failure reported by a provider implementation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderFault {
    /// Retryable transport-level failure.
    Transport(String),
    /// Credentials rejected; never retried.
    Auth(String),
    /// Non-retryable provider failure.
    Rejected(String),
}

pub trait ChatProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> std::result::Result<ChatResponse, ProviderFault>;
}

pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed(&self, text: &str) -> std::result::Result<Vec<f64>, ProviderFault>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Chat,
    Embed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// Logical timestamp: position in the ledger.
    pub seq: u64,
    pub tag: String,
    pub model_id: String,
    pub kind: CallKind,
    pub ok: bool,
    pub attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

/// Append-only record of completed gateway calls.
#[derive(Debug, Default)]
pub struct CallLedger {
    entries: Mutex<Vec<LedgerEntry>>,
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn append(&self, mut entry: LedgerEntry) {
        let mut entries = self.entries.lock().expect("ledger poisoned");
        entry.seq = entries.len() as u64;
        entries.push(entry);
    }

    /// Number of entries, optionally restricted to one tag.
    pub fn count(&self, tag: Option<&str>) -> usize {
        let entries = self.entries.lock().expect("ledger poisoned");
        match tag {
            None => entries.len(),
            Some(t) => entries.iter().filter(|e| e.tag == t).count(),
        }
    }

    /// Chat calls made on behalf of the method under test; excludes
    /// simulated-user calls and embeddings.
    pub fn llm_calls(&self) -> usize {
        let entries = self.entries.lock().expect("ledger poisoned");
        entries
            .iter()
            .filter(|e| e.kind == CallKind::Chat && e.tag != tags::SIMULATOR)
            .count()
    }

    pub fn snapshot(&self) -> Vec<LedgerEntry> {
        self.entries.lock().expect("ledger poisoned").clone()
    }

    pub fn tag_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for e in self.entries.lock().expect("ledger poisoned").iter() {
            *m.entry(e.tag.clone()).or_insert(0) += 1;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            initial_backoff: Duration::ZERO,
        }
    }
}

/// Per-tag request defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallDefaults {
    pub temperature: BTreeMap<String, f64>,
    pub max_tokens: BTreeMap<String, u32>,
    pub fallback_temperature: f64,
    pub fallback_max_tokens: u32,
}

impl Default for CallDefaults {
    fn default() -> Self {
        let temperature = [
            (tags::SYNTHESIS, 0.3),
            (tags::CRITIC, 0.3),
            (tags::CONTRADICTION, 0.3),
            (tags::SUMMARIZE, 0.3),
            (tags::ANALYSIS, 0.3),
            (tags::INFERENCE, 0.0),
            (tags::VERIFICATION, 0.0),
            (tags::CIPHER_SELECT, 0.0),
            (tags::ELICITATION, 0.7),
            (tags::GATE_QUESTION, 0.7),
            (tags::SIMULATOR, 0.7),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let max_tokens = [(tags::INFERENCE, 2048), (tags::VERIFICATION, 2048)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        CallDefaults {
            temperature,
            max_tokens,
            fallback_temperature: 0.3,
            fallback_max_tokens: 1024,
        }
    }
}

impl CallDefaults {
    pub fn temperature_for(&self, tag: &str) -> f64 {
        self.temperature
            .get(tag)
            .copied()
            .unwrap_or(self.fallback_temperature)
    }

    pub fn max_tokens_for(&self, tag: &str) -> u32 {
        self.max_tokens
            .get(tag)
            .copied()
            .unwrap_or(self.fallback_max_tokens)
    }
}

/// Shared, cloneable handle to a provider, an embedder and their ledger.
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    embedder: Arc<dyn Embedder>,
    ledger: Arc<CallLedger>,
    retry: RetryPolicy,
    defaults: Arc<CallDefaults>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("model_id", &self.provider.model_id())
            .field("embedder", &self.embedder.model_id())
            .field("calls", &self.ledger.count(None))
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Gateway {
            provider,
            embedder: Arc::new(HashedBagOfWords::default()),
            ledger: Arc::new(CallLedger::new()),
            retry: RetryPolicy::default(),
            defaults: Arc::new(CallDefaults::default()),
        }
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_defaults(mut self, defaults: CallDefaults) -> Self {
        self.defaults = Arc::new(defaults);
        self
    }

    /// Same provider and settings with a fresh ledger.
    pub fn fork(&self) -> Self {
        Gateway {
            ledger: Arc::new(CallLedger::new()),
            ..self.clone()
        }
    }

    pub fn model_id(&self) -> &str {
        self.provider.model_id()
    }

    pub fn ledger(&self) -> &CallLedger {
        &self.ledger
    }

    pub fn ledger_count(&self, tag: Option<&str>) -> usize {
        self.ledger.count(tag)
    }

    pub fn defaults(&self) -> &CallDefaults {
        &self.defaults
    }

    /// Builds a request with the per-tag defaults.
    pub fn request(
        &self,
        tag: &str,
        system: Option<String>,
        messages: Vec<ChatMessage>,
    ) -> ChatRequest {
        ChatRequest {
            system,
            messages,
            temperature: self.defaults.temperature_for(tag),
            max_tokens: self.defaults.max_tokens_for(tag),
            tag: tag.to_string(),
        }
    }

    /// Single-prompt convenience wrapper around [`Gateway::complete`].
    pub fn ask(&self, tag: &str, prompt: impl Into<String>) -> Result<ChatResponse> {
        self.complete(&self.request(tag, None, vec![ChatMessage::user(prompt)]))
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        req.validate()?;
        let model = self.provider.model_id().to_string();
        let (outcome, attempts) = self.with_retries(|| self.provider.complete(req));
        let entry = |ok: bool, usage: Option<Usage>| LedgerEntry {
            seq: 0,
            tag: req.tag.clone(),
            model_id: model.clone(),
            kind: CallKind::Chat,
            ok,
            attempts,
            usage,
        };
        match outcome {
            Ok(resp) => {
                self.ledger.append(entry(true, resp.usage));
                Ok(resp)
            }
            Err(fault) => {
                self.ledger.append(entry(false, None));
                Err(fault_to_error(fault))
            }
        }
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let model = self.embedder.model_id().to_string();
        let (outcome, attempts) = self.with_retries(|| self.embedder.embed(text));
        self.ledger.append(LedgerEntry {
            seq: 0,
            tag: tags::EMBED.to_string(),
            model_id: model,
            kind: CallKind::Embed,
            ok: outcome.is_ok(),
            attempts,
            usage: None,
        });
        outcome.map_err(fault_to_error)
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> std::result::Result<T, ProviderFault>,
    ) -> (std::result::Result<T, ProviderFault>, u32) {
        let attempts = self.retry.attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 1;
        loop {
            match call() {
                Err(ProviderFault::Transport(_)) if attempt < attempts => {
                    if !backoff.is_zero() {
                        std::thread::sleep(backoff);
                    }
                    backoff *= 2;
                    attempt += 1;
                }
                other => return (other, attempt),
            }
        }
    }
}

fn fault_to_error(fault: ProviderFault) -> Error {
    match fault {
        ProviderFault::Auth(m) => Error::Config(format!("authentication failed: {m}")),
        ProviderFault::Transport(m) => {
            Error::Provider(format!("transport failure after retries: {m}"))
        }
        ProviderFault::Rejected(m) => Error::Provider(m),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};

    use super::*;

    struct Flaky {
        failures_left: AtomicU32,
        calls: AtomicU32,
        auth: bool,
    }

    impl ChatProvider for Flaky {
        fn model_id(&self) -> &str {
            "flaky"
        }

        fn complete(&self, _req: &ChatRequest) -> std::result::Result<ChatResponse, ProviderFault> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.auth {
                return Err(ProviderFault::Auth("bad key".into()));
            }
            if self.failures_left.load(Ordering::SeqCst) > 0 {
                self.failures_left.fetch_sub(1, Ordering::SeqCst);
                return Err(ProviderFault::Transport("reset".into()));
            }
            Ok(ChatResponse {
                text: "Action: 2".into(),
                model_id: "flaky".into(),
                usage: None,
            })
        }
    }

    fn flaky(failures: u32, auth: bool) -> Arc<Flaky> {
        Arc::new(Flaky {
            failures_left: AtomicU32::new(failures),
            calls: AtomicU32::new(0),
            auth,
        })
    }

    #[test]
    fn retried_success_counts_once() {
        let p = flaky(2, false);
        let g = Gateway::new(p.clone()).with_retry(RetryPolicy::immediate(3));
        assert_eq!(g.ask(tags::INFERENCE, "x").unwrap().text, "Action: 2");
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
        assert_eq!(g.ledger_count(None), 1);
        assert_eq!(g.ledger().snapshot()[0].attempts, 3);
    }

    #[test]
    fn exhausted_retries_count_once_as_failed() {
        let g = Gateway::new(flaky(5, false)).with_retry(RetryPolicy::immediate(3));
        assert!(matches!(
            g.ask(tags::INFERENCE, "x"),
            Err(Error::Provider(_))
        ));
        let snap = g.ledger().snapshot();
        assert_eq!(snap.len(), 1);
        assert!(!snap[0].ok);
    }

    #[test]
    fn auth_failure_is_config_error_without_retry() {
        let p = flaky(0, true);
        let g = Gateway::new(p.clone()).with_retry(RetryPolicy::immediate(3));
        assert!(matches!(g.ask(tags::INFERENCE, "x"), Err(Error::Config(_))));
        assert_eq!(p.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn ledger_filters_by_tag() {
        let g = Gateway::new(flaky(0, false));
        assert_eq!(g.ledger_count(None), 0);
        for _ in 0..3 {
            g.ask(tags::INFERENCE, "x").unwrap();
        }
        for _ in 0..2 {
            g.ask(tags::CRITIC, "x").unwrap();
        }
        assert_eq!(g.ledger_count(Some(tags::CRITIC)), 2);
        assert_eq!(g.ledger_count(None), 5);
        g.embed("cold drink").unwrap();
        assert_eq!(g.ledger_count(None), 6);
        assert_eq!(g.ledger().llm_calls(), 5);
    }

    #[test]
    fn request_validation() {
        let g = Gateway::new(flaky(0, false));
        let mut req = g.request(tags::INFERENCE, None, vec![]);
        assert!(g.complete(&req).is_err());
        req.messages.push(ChatMessage::user("x"));
        req.temperature = 2.5;
        assert!(g.complete(&req).is_err());
        assert_eq!(g.ledger_count(None), 0);
    }

    #[test]
    fn default_temperatures() {
        let d = CallDefaults::default();
        assert_eq!(d.temperature_for(tags::SYNTHESIS), 0.3);
        assert_eq!(d.temperature_for(tags::INFERENCE), 0.0);
        assert_eq!(d.temperature_for(tags::ELICITATION), 0.7);
    }
}
