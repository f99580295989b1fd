//! Prompt templates and structured-response parsing.
//!
//! Template bodies are text assets with `{placeholder}` slots. The built-in
//! set is compiled in; a directory with a `manifest.toml` can replace any
//! body globally or per dataset.

mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use crate::error::{Error, Result};

pub use parse::{
    format_decision_blocks, markers, parse_decision_blocks, parse_decision_blocks_partial,
    parse_dimensions, parse_first_integer, parse_numbered_rules, parse_pause, parse_section,
    parse_yes_no, DecisionBlock,
};

/// Appended to a prompt when the first reply could not be parsed.
pub const REPAIR_SUFFIX: &str = "\n\nRespond ONLY in the required format.";

macro_rules! templates {
    ($($variant:ident => $name:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum TemplateName {
            $($variant),*
        }

        impl TemplateName {
            pub const ALL: &'static [TemplateName] = &[$(TemplateName::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(TemplateName::$variant => $name),*
                }
            }

            fn builtin(self) -> &'static str {
                match self {
                    $(TemplateName::$variant => include_str!(concat!("../../templates/", $name, ".txt"))),*
                }
            }
        }

        impl FromStr for TemplateName {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(TemplateName::$variant),)*
                    other => Err(Error::UnknownTemplate(other.to_string())),
                }
            }
        }
    };
}

templates! {
    ElicitationSystem => "elicitation_system",
    ElicitationTurn => "elicitation_turn",
    AnalyzeExamples => "analyze_examples",
    RulesSynthesis => "rules_synthesis",
    ContradictRules => "contradict_rules",
    InferenceBatch => "inference_batch",
    InferenceZeroShot => "inference_zero_shot",
    InferenceScenario => "inference_scenario",
    CriticAssess => "critic_assess",
    CriticQuery => "critic_query",
    CriticShouldUpdate => "critic_should_update",
    CriticUpdate => "critic_update",
    CipherSelect => "cipher_select",
    CipherAggregate => "cipher_aggregate",
    CipherInduce => "cipher_induce",
    CipherCorrection => "cipher_correction",
    GateQuestion => "gate_question",
    TidybotSummarize => "tidybot_summarize",
    SimCooperative => "sim_cooperative",
    SimAdversarial => "sim_adversarial",
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z][a-z_]*)\}").expect("placeholder pattern"))
}

fn normalize_body(body: &str) -> String {
    body.strip_suffix('\n').unwrap_or(body).to_string()
}

#[derive(Debug, Deserialize, Default)]
struct Manifest {
    #[serde(default)]
    overrides: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    bodies: BTreeMap<TemplateName, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet {
            bodies: TemplateName::ALL
                .iter()
                .map(|&n| (n, normalize_body(n.builtin())))
                .collect(),
        }
    }

    /// Loads `<name>.txt` files found in `dir` over the built-ins, then applies
    /// the manifest's overrides for `dataset`.
    pub fn load_dir(dir: &Path, dataset: Option<&str>) -> Result<Self> {
        let mut set = Self::builtin();
        for &name in TemplateName::ALL {
            let path = dir.join(format!("{}.txt", name.as_str()));
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                set.bodies.insert(name, normalize_body(&body));
            }
        }
        let manifest_path = dir.join("manifest.toml");
        let manifest: Manifest = if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path)
                .map_err(|e| Error::io(&manifest_path, e))?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", manifest_path.display())))?
        } else {
            Manifest::default()
        };
        if let Some(over) = dataset.and_then(|d| manifest.overrides.get(d)) {
            for (name, file) in over {
                let name: TemplateName = name.parse()?;
                let path = dir.join(file);
                let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                set.bodies.insert(name, normalize_body(&body));
            }
        }
        Ok(set)
    }

    pub fn body(&self, name: TemplateName) -> &str {
        &self.bodies[&name]
    }

    pub fn placeholders(&self, name: TemplateName) -> BTreeSet<String> {
        placeholder_re()
            .captures_iter(self.body(name))
            .map(|c| c[1].to_string())
            .collect()
    }

    /// Substitutes every placeholder in one pass; substituted text is never
    /// re-scanned. Extra inputs are ignored.
    pub fn render(&self, name: TemplateName, inputs: &[(&str, &str)]) -> Result<String> {
        let body = self.body(name);
        if let Some(missing) = placeholder_re()
            .captures_iter(body)
            .map(|c| c.get(1).expect("group").as_str())
            .find(|p| !inputs.iter().any(|(k, _)| k == p))
        {
            return Err(Error::Template(missing.to_string()));
        }
        Ok(placeholder_re()
            .replace_all(body, |c: &regex::Captures<'_>| {
                let key = &c[1];
                inputs
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| v.to_string())
                    .expect("checked above")
            })
            .into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elicitation_prompt_states_budget() {
        let t = TemplateSet::builtin();
        let out = t
            .render(
                TemplateName::ElicitationSystem,
                &[("kb", "..."), ("max_msg", "15")],
            )
            .unwrap();
        assert!(out.contains("at most 15 messages"));
        assert!(out.contains("end your response with \"PAUSE: true\""));
    }

    #[test]
    fn synthesis_prompt_demands_only_rules() {
        let t = TemplateSet::builtin();
        let out = t
            .render(
                TemplateName::RulesSynthesis,
                &[("transcript", "agent: hi\nuser: cold")],
            )
            .unwrap();
        assert!(out.contains("Provide ONLY the numbered rules list"));
        assert!(out.contains("user: cold"));
    }

    #[test]
    fn missing_placeholder_is_named() {
        let t = TemplateSet::builtin();
        let err = t
            .render(TemplateName::ElicitationSystem, &[("max_msg", "15")])
            .unwrap_err();
        assert!(matches!(err, Error::Template(ref p) if p == "kb"));
    }

    #[test]
    fn substitutions_are_not_rescanned() {
        let t = TemplateSet::builtin();
        let out = t
            .render(
                TemplateName::CipherAggregate,
                &[("prefs", "{kb} literally")],
            )
            .unwrap();
        assert!(out.contains("{kb} literally"));
    }

    #[test]
    fn every_builtin_renders_when_all_inputs_given() {
        let t = TemplateSet::builtin();
        for &name in TemplateName::ALL {
            let keys: Vec<String> = t.placeholders(name).into_iter().collect();
            let inputs: Vec<(&str, &str)> = keys.iter().map(|k| (k.as_str(), "X")).collect();
            let out = t.render(name, &inputs).unwrap();
            assert!(
                !placeholder_re().is_match(&out),
                "{name} left a placeholder"
            );
        }
    }

    #[test]
    fn directory_overrides_apply_per_dataset() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("hk.txt"),
            "Placement for {kb} within {max_msg}\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("manifest.toml"),
            "[overrides.housekeep]\nelicitation_system = \"hk.txt\"\n",
        )
        .unwrap();
        let hk = TemplateSet::load_dir(dir.path(), Some("housekeep")).unwrap();
        assert_eq!(
            hk.body(TemplateName::ElicitationSystem),
            "Placement for {kb} within {max_msg}"
        );
        let other = TemplateSet::load_dir(dir.path(), Some("ambik")).unwrap();
        assert!(other
            .body(TemplateName::ElicitationSystem)
            .starts_with("You are a moderator"));
    }
}
