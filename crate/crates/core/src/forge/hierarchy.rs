use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::tokens;
use crate::model::from_json_with_path;

const BUILTIN: &str = include_str!("../../data/hierarchies.json");

/// One trigger: every term must occur as a whole lowercase token. A term
/// ending in `*` matches any token with that prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Trigger {
    terms: Vec<String>,
}

impl Trigger {
    fn parse(raw: &str) -> Result<Self> {
        let terms: Vec<String> = raw
            .split('&')
            .map(|t| t.trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        if terms.is_empty() || terms.iter().any(|t| t == "*") {
            return Err(Error::Config(format!("invalid keyword `{raw}`")));
        }
        Ok(Trigger { terms })
    }

    fn matches(&self, words: &BTreeSet<String>) -> bool {
        self.terms.iter().all(|t| match t.strip_suffix('*') {
            Some(prefix) => words.iter().any(|w| w.starts_with(prefix)),
            None => words.contains(t),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceHierarchy {
    pub request_type: String,
    pub keywords: Vec<String>,
    pub priority: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelAssignment {
    pub label: String,
    pub request_type: Option<String>,
    pub fallback: bool,
}

/// Ordered request-type hierarchies with compiled triggers.
///
/// Detection order: hierarchies with a conjunctive trigger first, then
/// declaration order.
#[derive(Debug, Clone)]
pub struct HierarchySet {
    hierarchies: Vec<PreferenceHierarchy>,
    order: Vec<(usize, Vec<Trigger>)>,
}

impl HierarchySet {
    pub fn new(hierarchies: Vec<PreferenceHierarchy>) -> Result<Self> {
        let mut order = Vec::with_capacity(hierarchies.len());
        for (i, h) in hierarchies.iter().enumerate() {
            if h.keywords.is_empty() || h.priority.is_empty() {
                return Err(Error::Config(format!(
                    "hierarchy `{}` needs keywords and a priority list",
                    h.request_type
                )));
            }
            let triggers = h
                .keywords
                .iter()
                .map(|k| Trigger::parse(k))
                .collect::<Result<Vec<_>>>()?;
            order.push((i, triggers));
        }
        order.sort_by_key(|(i, t)| {
            (
                std::cmp::Reverse(t.iter().map(|t| t.terms.len()).max().unwrap_or(1)),
                *i,
            )
        });
        Ok(HierarchySet { hierarchies, order })
    }

    pub fn builtin() -> Self {
        Self::from_json(BUILTIN, "<builtin>").expect("bundled hierarchy table is valid")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let hs: Vec<PreferenceHierarchy> =
            from_json_with_path(text, "").map_err(|e| Error::forge(origin, e.to_string()))?;
        Self::new(hs).map_err(|e| Error::forge(origin, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn hierarchies(&self) -> &[PreferenceHierarchy] {
        &self.hierarchies
    }

    pub fn get(&self, request_type: &str) -> Option<&PreferenceHierarchy> {
        self.hierarchies
            .iter()
            .find(|h| h.request_type == request_type)
    }

    /// Request type whose trigger fires on `text`, if any.
    pub fn detect(&self, text: &str) -> Option<&PreferenceHierarchy> {
        let words: BTreeSet<String> = tokens(text).collect();
        self.order
            .iter()
            .find(|(_, triggers)| triggers.iter().any(|t| t.matches(&words)))
            .map(|(i, _)| &self.hierarchies[*i])
    }
}

/// Relabels a scenario to the single persona encoded by `hierarchies`.
///
/// Takes the first priority item present among `options` (case-insensitive,
/// returned with the option's casing); otherwise keeps `y_orig`.
pub fn assign_unified_label(
    task_text: &str,
    options: &[String],
    y_orig: &str,
    hierarchies: &HierarchySet,
) -> LabelAssignment {
    let detected = hierarchies.detect(task_text);
    let label = detected.and_then(|h| {
        h.priority.iter().find_map(|p| {
            let p = p.to_lowercase();
            options.iter().find(|o| o.to_lowercase() == p)
        })
    });
    match label {
        Some(l) => LabelAssignment {
            label: l.clone(),
            request_type: detected.map(|h| h.request_type.clone()),
            fallback: false,
        },
        None => LabelAssignment {
            label: y_orig.to_string(),
            request_type: detected.map(|h| h.request_type.clone()),
            fallback: true,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn table_exemplars() {
        let h = HierarchySet::builtin();
        assert_eq!(
            assign_unified_label("bring me a soda", &opts(&["Pepsi", "Sprite"]), "Sprite", &h)
                .label,
            "Pepsi"
        );
        assert_eq!(
            assign_unified_label("bring me a cola", &opts(&["Coke", "Pepsi"]), "Pepsi", &h).label,
            "Coke"
        );
        let book =
            assign_unified_label("hand me the book", &opts(&["Novel", "Atlas"]), "Atlas", &h);
        assert_eq!(
            (book.label.as_str(), book.fallback, book.request_type),
            ("Atlas", true, None)
        );
        assert_eq!(
            assign_unified_label(
                "open the drawer",
                &opts(&["Bottom Drawer", "Top Drawer"]),
                "Bottom Drawer",
                &h
            )
            .label,
            "Top Drawer"
        );
    }

    #[test]
    fn compound_and_wildcards() {
        let h = HierarchySet::builtin();
        assert_eq!(
            h.detect("get me a sweet drink").unwrap().request_type,
            "sweet_drink"
        );
        assert_eq!(
            h.detect("a drink please").map(|h| h.request_type.as_str()),
            None
        );
        assert_eq!(
            h.detect("something with caffeine").unwrap().request_type,
            "caffeinated"
        );
        assert_eq!(h.detect("grab the chips").unwrap().request_type, "chips");
        assert_eq!(h.detect("sodas for everyone"), None);
    }

    #[test]
    fn case_is_matched_to_options() {
        let h = HierarchySet::builtin();
        let a = assign_unified_label("Some CHIPS?", &opts(&["kettle", "jalapeño"]), "kettle", &h);
        assert_eq!(a.label, "jalapeño");
    }

    #[test]
    fn invalid_tables_rejected() {
        let bad = r#"[{"request_type":"x","keywords":[],"priority":["a"]}]"#;
        assert!(matches!(
            HierarchySet::from_json(bad, "t.json"),
            Err(Error::Forge { .. })
        ));
        let missing = r#"[{"request_type":"x","keywords":["a"]}]"#;
        let err = HierarchySet::from_json(missing, "t.json")
            .unwrap_err()
            .to_string();
        assert!(err.contains("priority"), "{err}");
    }
}
