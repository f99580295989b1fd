//! Dataset adapters and label-unification oracles.
//!
//! Everything here is pure: the same files and inputs always produce the
//! same labels. Request text is never rewritten by any transformation.

mod ambik;
mod hierarchy;

use std::path::{Path, PathBuf};

use regex::RegexBuilder;
use serde::{Deserialize, Serialize};

pub use ambik::{
    find_action, inject_variants, to_scenario, unify_ambik, DistractorDictionary, RawAmbikScenario,
    RuleChain, RuleKind, UnificationRule, UnificationRuleSpec, UnifyOutcome,
};
pub use hierarchy::{assign_unified_label, HierarchySet, LabelAssignment, PreferenceHierarchy};

use crate::error::{Error, Result};
use crate::model::{
    from_json_with_path, load_scenarios, strip_answers, ExampleSet, PreferenceProfile, Scenario,
    Tier,
};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCounts {
    #[serde(default)]
    pub in_distribution: Option<usize>,
    #[serde(default)]
    pub ood: Option<usize>,
}

/// Index file naming the train and test scenario files, relative to itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KitchenManifest {
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default)]
    pub tiers: Option<TierCounts>,
    #[serde(default)]
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct KitchenAmbig {
    pub manifest_path: PathBuf,
    pub manifest: KitchenManifest,
    /// Labeled training scenarios; only labeled baselines may see the labels.
    pub train: Vec<Scenario>,
    pub test: Vec<Scenario>,
}

impl KitchenAmbig {
    pub fn examples(&self) -> ExampleSet {
        strip_answers(&self.train)
    }

    pub fn profile(&self) -> Result<Option<PreferenceProfile>> {
        self.manifest
            .profile
            .as_ref()
            .map(|p| PreferenceProfile::load(&resolve(&self.manifest_path, p)))
            .transpose()
    }

    pub fn tier_count(&self, tier: Tier) -> usize {
        self.test.iter().filter(|s| s.tier == tier).count()
    }
}

fn resolve(manifest: &Path, rel: &Path) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(rel)
}

pub fn load_kitchenambig(manifest_path: &Path) -> Result<KitchenAmbig> {
    let origin = manifest_path.display().to_string();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: KitchenManifest =
        from_json_with_path(&text, "").map_err(|e| Error::forge(&origin, e.to_string()))?;
    let train = load_scenarios(&resolve(manifest_path, &manifest.train))?;
    let test = load_scenarios(&resolve(manifest_path, &manifest.test))?;
    for s in train.iter().chain(&test) {
        if s.preferred.is_none() {
            return Err(Error::forge(
                &origin,
                format!("scenario {}: field `preferred` missing", s.id),
            ));
        }
    }
    let data = KitchenAmbig {
        manifest_path: manifest_path.to_path_buf(),
        manifest,
        train,
        test,
    };
    if let Some(t) = &data.manifest.tiers {
        for (tier, want) in [
            (Tier::InDistribution, t.in_distribution),
            (Tier::Ood, t.ood),
        ] {
            if let Some(want) = want {
                let got = data.tier_count(tier);
                if got != want {
                    return Err(Error::forge(
                        &origin,
                        format!("tier {tier}: manifest declares {want}, found {got}"),
                    ));
                }
            }
        }
    }
    Ok(data)
}

/// Pre-normalized object-placement record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HousekeepRecord {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub room: String,
    pub object: String,
    pub receptacles: Vec<String>,
    pub preferred_receptacle: String,
}

pub fn housekeep_scenario(r: &HousekeepRecord) -> Result<Scenario> {
    if r.receptacles.is_empty() {
        return Err(Error::forge(&r.id, "field `receptacles` is empty"));
    }
    let preferred = r
        .receptacles
        .iter()
        .position(|x| x == &r.preferred_receptacle)
        .ok_or_else(|| {
            Error::forge(
                &r.id,
                "field `preferred_receptacle` is not among `receptacles`",
            )
        })?;
    let room = if r.room.is_empty() {
        "House"
    } else {
        r.room.as_str()
    };
    Ok(Scenario::new(
        r.id.clone(),
        format!("{room} with {}", r.receptacles.join(", ")),
        format!("Put away the {}", r.object),
        r.receptacles
            .iter()
            .map(|x| format!("Place the {} in the {x}", r.object)),
        Some(preferred + 1),
    ))
}

pub fn load_housekeep(path: &Path) -> Result<Vec<Scenario>> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<HousekeepRecord> =
        from_json_with_path(&text, "").map_err(|e| Error::forge(&origin, e.to_string()))?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut r = r.clone();
            if r.id.is_empty() {
                r.id = format!("housekeep-{:03}", i + 1);
            }
            housekeep_scenario(&r).map_err(|e| Error::forge(&origin, e.to_string()))
        })
        .collect()
}

fn phrase_in(text: &str, phrase: &str) -> bool {
    RegexBuilder::new(&format!(r"(^|\W){}($|\W)", regex::escape(phrase)))
        .case_insensitive(true)
        .build()
        .map(|re| re.is_match(text))
        .unwrap_or(false)
}

/// Per-candidate agreement with `profile`: +1 per dimension value named in
/// the text, -1 per opposite value named.
pub fn profile_scores(profile: &PreferenceProfile, scenario: &Scenario) -> Vec<i32> {
    scenario
        .candidates
        .iter()
        .map(|c| {
            profile
                .dimensions()
                .iter()
                .map(|d| {
                    let plus = i32::from(phrase_in(&c.text, &d.value));
                    let minus = d
                        .opposite
                        .as_deref()
                        .map_or(0, |o| i32::from(phrase_in(&c.text, o)));
                    plus - minus
                })
                .sum()
        })
        .collect()
}

/// Label implied by `profile`: the unique best-scoring candidate, if any.
pub fn profile_label(profile: &PreferenceProfile, scenario: &Scenario) -> Option<usize> {
    let scores = profile_scores(profile, scenario);
    let best = *scores.iter().max()?;
    let mut at = scores.iter().enumerate().filter(|(_, &s)| s == best);
    let (i, _) = at.next()?;
    at.next().is_none().then_some(i + 1)
}

/// Mobile-manipulation style record for hierarchy relabeling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHierarchyScenario {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub environment: String,
    pub task_text: String,
    pub options: Vec<String>,
    pub original_label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnifyMode {
    Hierarchy,
    Rules,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchReport {
    pub id: String,
    pub label: String,
    pub rule: Option<String>,
    pub fallback: bool,
}

/// Relabels every raw record in `text`; returns canonical scenarios and a
/// per-record report.
pub fn unify_file(
    text: &str,
    origin: &str,
    mode: UnifyMode,
    hierarchies: &HierarchySet,
    chain: &RuleChain,
) -> Result<(Vec<Scenario>, Vec<MatchReport>)> {
    let forge = |e: Error| Error::forge(origin, e.to_string());
    let mut scenarios = Vec::new();
    let mut reports = Vec::new();
    match mode {
        UnifyMode::Hierarchy => {
            let raws: Vec<RawHierarchyScenario> = from_json_with_path(text, "").map_err(forge)?;
            for (i, r) in raws.into_iter().enumerate() {
                if r.options.is_empty() {
                    return Err(Error::forge(origin, format!("[{i}].options is empty")));
                }
                let id = if r.id.is_empty() {
                    format!("unified-{:03}", i + 1)
                } else {
                    r.id
                };
                let a =
                    assign_unified_label(&r.task_text, &r.options, &r.original_label, hierarchies);
                let raw = RawAmbikScenario {
                    id: id.clone(),
                    environment: r.environment,
                    task_text: r.task_text,
                    variants: Vec::new(),
                    actions: r.options,
                    original_label: r.original_label,
                };
                scenarios.push(to_scenario(&raw, &a.label).map_err(forge)?);
                reports.push(MatchReport {
                    id,
                    label: a.label,
                    rule: a.request_type.filter(|_| !a.fallback),
                    fallback: a.fallback,
                });
            }
        }
        UnifyMode::Rules => {
            let raws: Vec<RawAmbikScenario> = from_json_with_path(text, "").map_err(forge)?;
            for (i, mut r) in raws.into_iter().enumerate() {
                if r.actions.is_empty() {
                    return Err(Error::forge(origin, format!("[{i}].actions is empty")));
                }
                if r.id.is_empty() {
                    r.id = format!("unified-{:03}", i + 1);
                }
                let out = unify_ambik(&r, chain);
                scenarios.push(to_scenario(&r, &out.label).map_err(forge)?);
                reports.push(MatchReport {
                    id: r.id.clone(),
                    label: out.label,
                    rule: out.rule,
                    fallback: out.fallback,
                });
            }
        }
    }
    Ok((scenarios, reports))
}
