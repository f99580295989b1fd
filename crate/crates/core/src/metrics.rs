//! Accuracy, call efficiency, gating deltas, significance tests and the
//! report formats built from them.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::error::{Error, Result};
use crate::inference::Decision;
use crate::model::Tier;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Below this many discordant pairs McNemar uses the exact binomial form.
pub const MCNEMAR_EXACT_BELOW: u64 = 25;

/// Correct decisions per model call: `A * N / C`.
pub fn efficiency(accuracy: f64, decisions: usize, llm_calls: usize) -> Result<f64> {
    if llm_calls == 0 {
        return Err(Error::UndefinedMetric(
            "efficiency with zero model calls".into(),
        ));
    }
    if decisions == 0 {
        return Err(Error::UndefinedMetric(
            "efficiency with zero decisions".into(),
        ));
    }
    Ok(accuracy * decisions as f64 / llm_calls as f64)
}

/// Each score divided by the group maximum.
pub fn normalize_efficiency(scores: &[f64]) -> Result<Vec<f64>> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if scores.is_empty() || max <= 0.0 || !max.is_finite() {
        return Err(Error::UndefinedMetric(
            "normalization needs a positive maximum".into(),
        ));
    }
    Ok(scores.iter().map(|e| e / max).collect())
}

pub fn correctness(decisions: &[Decision]) -> Vec<bool> {
    decisions.iter().map(Decision::is_correct).collect()
}

pub fn mean_bool(xs: &[bool]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().filter(|&&x| x).count() as f64 / xs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatingDelta {
    pub acc_gated: f64,
    pub acc_nongated: f64,
    pub acc_baseline: f64,
    pub delta_gated: f64,
    pub delta_nongated: f64,
    /// `delta_gated - delta_nongated`; the baseline cancels.
    pub difference: f64,
}

/// Gated vs non-gated improvement over a shared baseline. All three runs
/// must cover the same scenario sequence.
pub fn gating_delta(
    gated: &[Decision],
    nongated: &[Decision],
    baseline: &[Decision],
) -> Result<GatingDelta> {
    let ids = |d: &[Decision]| d.iter().map(|x| x.scenario_id.clone()).collect::<Vec<_>>();
    if ids(gated) != ids(nongated) || ids(gated) != ids(baseline) {
        return Err(Error::Config(
            "gating runs cover different scenario sequences".into(),
        ));
    }
    let g = mean_bool(&correctness(gated));
    let ng = mean_bool(&correctness(nongated));
    let b = mean_bool(&correctness(baseline));
    Ok(GatingDelta {
        acc_gated: g,
        acc_nongated: ng,
        acc_baseline: b,
        delta_gated: g - b,
        delta_nongated: ng - b,
        difference: (g - b) - (ng - b),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigTest {
    IndependentT,
    PairedT,
    Mcnemar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: SigTest,
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom for t tests, discordant pairs for McNemar.
    pub df: f64,
}

fn fmt_p(p: f64) -> String {
    if p > 0.0 && p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn two_sided_t(t: f64, df: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::DegenerateSamples(e.to_string()))?;
    Ok((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// Student's two-sample t test with pooled variance.
pub fn independent_t(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::DegenerateSamples(
            "each sample needs at least two values".into(),
        ));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * sample_var(a) + (nb - 1.0) * sample_var(b)) / df;
    if pooled <= 0.0 {
        return Err(Error::DegenerateSamples("zero pooled variance".into()));
    }
    let t = (mean(a) - mean(b)) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(TestResult {
        test: SigTest::IndependentT,
        statistic: t,
        p_value: two_sided_t(t, df)?,
        df,
    })
}

/// Paired t test on `a - b`. Identical samples give t = 0, p = 1.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::DegenerateSamples(
            "paired samples differ in length".into(),
        ));
    }
    if a.len() < 2 {
        return Err(Error::DegenerateSamples("need at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = d.len() as f64 - 1.0;
    if d.iter().all(|&x| x == 0.0) {
        return Ok(TestResult {
            test: SigTest::PairedT,
            statistic: 0.0,
            p_value: 1.0,
            df,
        });
    }
    let var = sample_var(&d);
    if var <= 0.0 {
        return Err(Error::DegenerateSamples(
            "constant non-zero differences".into(),
        ));
    }
    let t = mean(&d) / (var / d.len() as f64).sqrt();
    Ok(TestResult {
        test: SigTest::PairedT,
        statistic: t,
        p_value: two_sided_t(t, df)?,
        df,
    })
}

/// McNemar's test on paired binary outcomes.
pub fn mcnemar(a: &[bool], b: &[bool]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::DegenerateSamples(
            "paired outcomes differ in length".into(),
        ));
    }
    let only_a = a.iter().zip(b).filter(|(x, y)| **x && !**y).count() as u64;
    let only_b = a.iter().zip(b).filter(|(x, y)| !**x && **y).count() as u64;
    mcnemar_counts(only_a, only_b)
}

/// McNemar from discordant counts `b` (first correct only) and `c`.
pub fn mcnemar_counts(b: u64, c: u64) -> Result<TestResult> {
    let n = b + c;
    if n == 0 {
        return Ok(TestResult {
            test: SigTest::Mcnemar,
            statistic: 0.0,
            p_value: 1.0,
            df: 0.0,
        });
    }
    if n < MCNEMAR_EXACT_BELOW {
        let dist = Binomial::new(0.5, n).map_err(|e| Error::DegenerateSamples(e.to_string()))?;
        let p = (2.0 * dist.cdf(b.min(c))).min(1.0);
        return Ok(TestResult {
            test: SigTest::Mcnemar,
            statistic: b.min(c) as f64,
            p_value: p,
            df: n as f64,
        });
    }
    let chi = ((b as f64 - c as f64).abs() - 1.0).max(0.0).powi(2) / n as f64;
    let dist = ChiSquared::new(1.0).map_err(|e| Error::DegenerateSamples(e.to_string()))?;
    Ok(TestResult {
        test: SigTest::Mcnemar,
        statistic: chi,
        p_value: (1.0 - dist.cdf(chi)).clamp(0.0, 1.0),
        df: n as f64,
    })
}

pub fn significance(test: SigTest, a: &[f64], b: &[f64]) -> Result<TestResult> {
    match test {
        SigTest::IndependentT => independent_t(a, b),
        SigTest::PairedT => paired_t(a, b),
        SigTest::Mcnemar => {
            let binary = |xs: &[f64]| -> Result<Vec<bool>> {
                xs.iter()
                    .map(|&x| match x {
                        0.0 => Ok(false),
                        1.0 => Ok(true),
                        _ => Err(Error::DegenerateSamples(
                            "McNemar needs 0/1 outcomes".into(),
                        )),
                    })
                    .collect()
            };
            mcnemar(&binary(a)?, &binary(b)?)
        }
    }
}

/// Prefix means of a correctness log.
pub fn cumulative_series(log: &[bool]) -> Vec<f64> {
    let mut hits = 0usize;
    log.iter()
        .enumerate()
        .map(|(i, &c)| {
            hits += usize::from(c);
            hits as f64 / (i + 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// 1-based query index.
    pub index: usize,
    pub mean: f64,
    /// Standard error across runs; zero with a single run.
    pub se: f64,
    pub runs: usize,
}

/// Mean cumulative accuracy across runs with +-1 SE bands.
pub fn aggregate_series(runs: &[Vec<bool>]) -> Vec<SeriesPoint> {
    let series: Vec<Vec<f64>> = runs.iter().map(|r| cumulative_series(r)).collect();
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let vals: Vec<f64> = series.iter().filter_map(|s| s.get(i).copied()).collect();
            let m = mean(&vals);
            let se = if vals.len() > 1 {
                (sample_var(&vals) / vals.len() as f64).sqrt()
            } else {
                0.0
            };
            SeriesPoint {
                index: i + 1,
                mean: m,
                se,
                runs: vals.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierStat {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub model: String,
    pub accuracy: f64,
    pub decisions: usize,
    pub llm_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_efficiency: Option<f64>,
    #[serde(default)]
    pub tiers: BTreeMap<String, TierStat>,
    #[serde(default)]
    pub batch_accuracies: Vec<f64>,
    #[serde(default)]
    pub cumulative: Vec<f64>,
    #[serde(default)]
    pub parse_failures: usize,
    /// Model that produced the rules, when it differs from the executor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules_source: Option<String>,
}

impl MethodReport {
    /// Scores `decisions`; `tiers` maps scenario id to its tier.
    pub fn build(
        method: impl Into<String>,
        model: impl Into<String>,
        decisions: &[Decision],
        tiers: &HashMap<String, Tier>,
        llm_calls: usize,
    ) -> Self {
        let log = correctness(decisions);
        let accuracy = mean_bool(&log);
        let mut by_tier: BTreeMap<String, TierStat> = BTreeMap::new();
        for (d, &ok) in decisions.iter().zip(&log) {
            let tier = tiers
                .get(&d.scenario_id)
                .copied()
                .unwrap_or_default()
                .to_string();
            let e = by_tier.entry(tier).or_insert(TierStat {
                n: 0,
                correct: 0,
                accuracy: 0.0,
            });
            e.n += 1;
            e.correct += usize::from(ok);
        }
        for t in by_tier.values_mut() {
            t.accuracy = t.correct as f64 / t.n as f64;
        }
        MethodReport {
            method: method.into(),
            model: model.into(),
            accuracy,
            decisions: decisions.len(),
            llm_calls,
            efficiency: efficiency(accuracy, decisions.len(), llm_calls).ok(),
            normalized_efficiency: None,
            tiers: by_tier,
            batch_accuracies: Vec::new(),
            cumulative: cumulative_series(&log),
            parse_failures: decisions.iter().filter(|d| d.error.is_some()).count(),
            rules_source: None,
        }
    }

    pub fn with_batches(mut self, batch_accuracies: Vec<f64>) -> Self {
        self.batch_accuracies = batch_accuracies;
        self
    }

    /// Tier accuracies weighted by tier size.
    pub fn tier_weighted_accuracy(&self) -> f64 {
        let n: usize = self.tiers.values().map(|t| t.n).sum();
        if n == 0 {
            return 0.0;
        }
        self.tiers
            .values()
            .map(|t| t.accuracy * t.n as f64)
            .sum::<f64>()
            / n as f64
    }
}

/// Sets `normalized_efficiency` on every report with a defined efficiency.
pub fn normalize_reports(reports: &mut [MethodReport]) -> Result<()> {
    let idx: Vec<usize> = (0..reports.len())
        .filter(|&i| reports[i].efficiency.is_some())
        .collect();
    let scores: Vec<f64> = idx
        .iter()
        .map(|&i| reports[i].efficiency.unwrap_or(0.0))
        .collect();
    let norm = normalize_efficiency(&scores)?;
    for (i, v) in idx.into_iter().zip(norm) {
        reports[i].normalized_efficiency = Some(v);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub models: usize,
}

/// Mean and sample standard deviation of accuracy per method across models.
pub fn summarize_across_models(reports: &[MethodReport]) -> Vec<MethodSummary> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in reports {
        groups
            .entry(r.method.as_str())
            .or_default()
            .push(r.accuracy);
    }
    groups
        .into_iter()
        .map(|(m, accs)| MethodSummary {
            method: m.to_string(),
            mean_accuracy: mean(&accs),
            std_accuracy: if accs.len() > 1 {
                sample_var(&accs).sqrt()
            } else {
                0.0
            },
            models: accs.len(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTest {
    pub label: String,
    #[serde(flatten)]
    pub result: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub methods: Vec<MethodReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gating: Option<GatingDelta>,
    #[serde(default)]
    pub tests: Vec<NamedTest>,
    #[serde(default)]
    pub summary: Vec<MethodSummary>,
    /// Notes on accounting choices, e.g. whether repair calls count toward C.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Report {
    pub fn new(mut methods: Vec<MethodReport>) -> Self {
        let _ = normalize_reports(&mut methods);
        let summary = summarize_across_models(&methods);
        let mut metadata = BTreeMap::new();
        metadata.insert(
            "llm_calls".to_string(),
            "all chat calls of the run including repairs, failed attempts counted once; excludes simulator and embedding calls"
                .to_string(),
        );
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            methods,
            gating: None,
            tests: Vec::new(),
            summary,
            metadata,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned columns for terminals.
    pub fn to_text(&self) -> String {
        let mut rows = vec![[
            "method".to_string(),
            "model".to_string(),
            "acc".to_string(),
            "N".to_string(),
            "C".to_string(),
            "E".to_string(),
            "E_norm".to_string(),
            "tiers".to_string(),
        ]];
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        for m in &self.methods {
            let tiers = m
                .tiers
                .iter()
                .map(|(k, t)| format!("{k}={:.3}/{}", t.accuracy, t.n))
                .collect::<Vec<_>>()
                .join(" ");
            rows.push([
                m.method.clone(),
                m.model.clone(),
                format!("{:.3}", m.accuracy),
                m.decisions.to_string(),
                m.llm_calls.to_string(),
                opt(m.efficiency),
                opt(m.normalized_efficiency),
                tiers,
            ]);
        }
        let mut widths = [0usize; 8];
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        for r in &rows {
            let line = r
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ");
            out.push_str(line.trim_end());
            out.push('\n');
        }
        if let Some(g) = &self.gating {
            let _ = writeln!(
                out,
                "\ngating: acc_gated={:.3} acc_nongated={:.3} baseline={:.3} difference={:+.3}",
                g.acc_gated, g.acc_nongated, g.acc_baseline, g.difference
            );
        }
        for t in &self.tests {
            let _ = writeln!(
                out,
                "test {}: {:?} statistic={:.4} df={} p={}",
                t.label,
                t.result.test,
                t.result.statistic,
                t.result.df,
                fmt_p(t.result.p_value)
            );
        }
        out
    }

    /// Long-format plot data: method, model, query index, cumulative accuracy.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("method,model,index,cumulative_accuracy\n");
        for m in &self.methods {
            for (i, v) in m.cumulative.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{:.6}", m.method, m.model, i + 1, v);
            }
        }
        out
    }
}
