//! Declarative run configuration: one TOML file plus `--set key=value`
//! overrides. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{Method, RetrievalMode, DEFAULT_CORRECTION_BUDGET, DEFAULT_TOP_K};
use crate::critic::{AdaptiveParams, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::simulation::Stance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Built-in prompt-aware deterministic model.
    Heuristic,
    /// Scripted replies loaded from a JSON file.
    Mock,
    /// Any OpenAI-compatible HTTP endpoint.
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub provider: ProviderKind,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    /// Extra executor models for a sweep; the report gets one row per model.
    #[serde(default)]
    pub sweep: Vec<String>,
    #[serde(default)]
    pub topics: Option<PathBuf>,
    #[serde(default)]
    pub slip: u64,
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset_tag: Option<String>,
}

fn default_model_id() -> String {
    "heuristic".into()
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// KitchenAmbig-style manifest naming train and test files.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Pre-normalized object-placement records used as the test stream.
    #[serde(default)]
    pub housekeep: Option<PathBuf>,
    /// Keep only the first n training examples.
    #[serde(default)]
    pub max_examples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElicitationConfig {
    pub budget: usize,
}

impl Default for ElicitationConfig {
    fn default() -> Self {
        ElicitationConfig { budget: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialRules {
    /// Run elicitation first and start from its rules.
    Elicit,
    Empty,
    /// Elicit, then negate every rule.
    Contradicted,
    /// Load `rules_file`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub batch_size: usize,
    pub feedback_interval: usize,
    pub alpha: f64,
    pub verify: bool,
    pub initial: InitialRules,
    #[serde(default)]
    pub rules_file: Option<PathBuf>,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            batch_size: 10,
            feedback_interval: 10,
            alpha: DEFAULT_ALPHA,
            verify: true,
            initial: InitialRules::Elicit,
            rules_file: None,
        }
    }
}

impl AdaptiveConfig {
    pub fn params(&self) -> AdaptiveParams {
        AdaptiveParams {
            batch_size: self.batch_size,
            feedback_interval: self.feedback_interval,
            alpha: self.alpha,
            verify: self.verify,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub top_k: usize,
    pub correction_budget: usize,
    pub turn_budget: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            top_k: DEFAULT_TOP_K,
            correction_budget: DEFAULT_CORRECTION_BUDGET,
            turn_budget: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelConfigKind {
    Scripted,
    Llm,
    /// Questions on stdout, answers on stdin.
    Console,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub kind: ChannelConfigKind,
    pub stance: Stance,
    /// Stance used while eliciting initial rules; defaults to `stance`.
    #[serde(default)]
    pub elicitation_stance: Option<Stance>,
    #[serde(default)]
    pub profile: Option<PathBuf>,
    /// Model behind the LLM simulator; defaults to `model.model_id`.
    #[serde(default)]
    pub model_id: Option<String>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            kind: ChannelConfigKind::Scripted,
            stance: Stance::Cooperative,
            elicitation_stance: None,
            profile: None,
            model_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub batch_size: usize,
    /// Methods to run; empty means just the top-level `method`.
    #[serde(default)]
    pub methods: Vec<Method>,
    /// Evaluate a fixed rules file instead of eliciting (portability runs).
    #[serde(default)]
    pub rules_file: Option<PathBuf>,
    #[serde(default)]
    pub rules_source_model: Option<String>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            batch_size: 10,
            methods: Vec::new(),
            rules_file: None,
            rules_source_model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Similarity used by the retrieval-memory baseline.
    #[serde(default = "default_retrieval")]
    pub retrieval: RetrievalMode,
    pub model: ModelConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub elicitation: ElicitationConfig,
    #[serde(default)]
    pub adaptive: AdaptiveConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_retrieval() -> RetrievalMode {
    RetrievalMode::Levenshtein
}

/// Parses `value` as a TOML literal, falling back to a plain string.
fn literal(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Applies `a.b.c=value` to a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), literal(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses TOML text; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, overrides)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.model.topics);
        fix(&mut self.model.script);
        fix(&mut self.model.templates_dir);
        fix(&mut self.dataset.manifest);
        fix(&mut self.dataset.train);
        fix(&mut self.dataset.test);
        fix(&mut self.dataset.housekeep);
        fix(&mut self.adaptive.rules_file);
        fix(&mut self.channel.profile);
        fix(&mut self.evaluate.rules_file);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    /// Checks parameter ranges and that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        if self.method == Method::Adaptive {
            self.adaptive.params().validate()?;
        }
        if self.evaluate.batch_size == 0 {
            return Err(Error::Config("evaluate.batch_size must be positive".into()));
        }
        if self.baselines.top_k == 0 {
            return Err(Error::Config("baselines.top_k must be at least 1".into()));
        }
        let paths = [
            ("model.topics", &self.model.topics),
            ("model.script", &self.model.script),
            ("model.templates_dir", &self.model.templates_dir),
            ("dataset.manifest", &self.dataset.manifest),
            ("dataset.train", &self.dataset.train),
            ("dataset.test", &self.dataset.test),
            ("dataset.housekeep", &self.dataset.housekeep),
            ("adaptive.rules_file", &self.adaptive.rules_file),
            ("channel.profile", &self.channel.profile),
            ("evaluate.rules_file", &self.evaluate.rules_file),
        ];
        for (name, p) in paths {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "{name}: {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        match self.model.provider {
            ProviderKind::Heuristic if self.model.topics.is_none() => Err(Error::Config(
                "model.topics is required for the heuristic provider".into(),
            )),
            ProviderKind::Mock if self.model.script.is_none() => Err(Error::Config(
                "model.script is required for the mock provider".into(),
            )),
            ProviderKind::Openai if self.model.endpoint.is_none() => Err(Error::Config(
                "model.endpoint is required for the openai provider".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Hex SHA-256 of the resolved config's canonical JSON.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to toml")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
method = "rules"
[model]
provider = "heuristic"
topics = "topics.json"
"#;

    #[test]
    fn overrides_and_paths() {
        let cfg = RunConfig::from_toml(
            BASE,
            Path::new("/cfg"),
            &[
                "adaptive.alpha=2.0".into(),
                "channel.stance=adversarial".into(),
                "model.model_id=x-1".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.adaptive.alpha, 2.0);
        assert_eq!(cfg.channel.stance, Stance::Adversarial);
        assert_eq!(cfg.model.model_id, "x-1");
        assert_eq!(
            cfg.model.topics.as_deref(),
            Some(Path::new("/cfg/topics.json"))
        );
        assert_eq!(cfg.output_dir, Path::new("/cfg/runs"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_toml(BASE, Path::new("/c"), &[]).unwrap();
        let b =
            RunConfig::from_toml(BASE, Path::new("/c"), &["elicitation.budget=3".into()]).unwrap();
        assert_eq!(
            a.hash(),
            RunConfig::from_toml(BASE, Path::new("/c"), &[])
                .unwrap()
                .hash()
        );
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let round = RunConfig::from_toml(&a.to_toml(), Path::new("/c"), &[]).unwrap();
        assert_eq!(round, a);
    }

    #[test]
    fn validation_errors() {
        let cfg = RunConfig::from_toml(
            BASE,
            Path::new("/nonexistent"),
            &[
                "method=adaptive".into(),
                "adaptive.batch_size=10".into(),
                "adaptive.feedback_interval=5".into(),
            ],
        )
        .unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("feedback_interval")));
        let cfg = RunConfig::from_toml(BASE, Path::new("/nonexistent"), &[]).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("does not exist")));
        assert!(RunConfig::from_toml(BASE, Path::new("/"), &["bogus".into()]).is_err());
        assert!(RunConfig::from_toml(BASE, Path::new("/"), &["model.nope=1".into()]).is_err());
    }
}
