//! Adaptive rule refinement: an intervention gate on the batch-accuracy
//! history decides when to consult a rules critic, and a verification gate
//! accepts the critic's proposal only if it does not lower accuracy on the
//! scenarios seen since the last accepted update.

use serde::{Deserialize, Serialize};

use crate::elicitation::UserChannel;
use crate::error::{Error, Result};
use crate::gateway::tags;
use crate::inference::{Conditioning, Decision, InferenceEngine};
use crate::model::{RuleOrigin, RuleSet, Scenario};
use crate::prompts::{
    markers, parse_numbered_rules, parse_section, parse_yes_no, TemplateName, REPAIR_SUFFIX,
};

pub const DEFAULT_ALPHA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveParams {
    pub batch_size: usize,
    pub feedback_interval: usize,
    pub alpha: f64,
    /// When false every critic proposal is accepted without verification.
    pub verify: bool,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        AdaptiveParams {
            batch_size: 10,
            feedback_interval: 10,
            alpha: DEFAULT_ALPHA,
            verify: true,
        }
    }
}

impl AdaptiveParams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.feedback_interval < self.batch_size {
            return Err(Error::Config(format!(
                "feedback_interval ({}) must be at least batch_size ({})",
                self.feedback_interval, self.batch_size
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be a non-negative number, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Mean and population standard deviation.
pub fn history_stats(history: &[f64]) -> Result<(f64, f64)> {
    if history.is_empty() {
        return Err(Error::StatsUnavailable("empty accuracy history".into()));
    }
    // Welford's update: a constant history gives exactly that constant and
    // sigma 0, which a plain sum / n does not.
    let (mut mu, mut m2) = (0.0, 0.0);
    for (i, &x) in history.iter().enumerate() {
        let d = x - mu;
        mu += d / (i + 1) as f64;
        m2 += d * (x - mu);
    }
    Ok((mu, (m2 / history.len() as f64).max(0.0).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReason {
    ColdStart,
    Anomaly,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateEvent {
    pub at_counter: usize,
    pub triggered: bool,
    pub mu: f64,
    pub sigma: f64,
    pub current_acc: f64,
    pub reason: GateReason,
}

/// Fires on cold start (fewer than two observations) or when the current
/// accuracy sits more than `alpha` standard deviations below the mean.
/// `history` already includes `acc`.
pub fn intervention_gate(history: &[f64], acc: f64, alpha: f64, at_counter: usize) -> GateEvent {
    let (mu, sigma) = history_stats(history).unwrap_or((0.0, 0.0));
    let reason = if history.len() < 2 {
        GateReason::ColdStart
    } else if mu - acc > alpha * sigma {
        GateReason::Anomaly
    } else {
        GateReason::None
    };
    GateEvent {
        at_counter,
        triggered: reason != GateReason::None,
        mu,
        sigma,
        current_acc: acc,
        reason,
    }
}

/// Correctness signal for decisions.
pub trait Judge: Send {
    /// Scores a decision made during the stream.
    fn judge(&mut self, scenario: &Scenario, decision: &Decision) -> Result<bool>;

    /// Scores a decision re-made during verification; no new user input.
    fn rejudge(&mut self, scenario: &Scenario, decision: &Decision) -> Result<bool> {
        self.judge(scenario, decision)
    }
}

/// Ground-truth labels.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelJudge;

impl Judge for LabelJudge {
    fn judge(&mut self, scenario: &Scenario, decision: &Decision) -> Result<bool> {
        let preferred = scenario
            .preferred
            .ok_or_else(|| Error::Config(format!("scenario {} is unlabeled", scenario.id)))?;
        Ok(decision.chosen_original_index == Some(preferred))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticExit {
    NoGap,
    NoQuestion,
    UserUnavailable,
    Declined,
    ParseFailure,
    Proposed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticOutcome {
    pub exit: CriticExit,
    pub question: Option<String>,
    pub answer: Option<String>,
    pub proposal: Option<RuleSet>,
}

impl CriticOutcome {
    fn exit(exit: CriticExit, question: Option<String>, answer: Option<String>) -> Self {
        CriticOutcome {
            exit,
            question,
            answer,
            proposal: None,
        }
    }
}

/// One judged decision in the critic's view window.
#[derive(Debug, Clone)]
pub struct Judged {
    pub scenario: Scenario,
    pub decision: Decision,
    pub correct: bool,
}

fn render_window(window: &[Judged]) -> String {
    window
        .iter()
        .enumerate()
        .map(|(i, j)| {
            let chosen = j
                .decision
                .chosen_original_index
                .and_then(|c| j.scenario.candidate(c))
                .map(|c| c.text.as_str())
                .unwrap_or("(no valid choice)");
            let reasoning: String = j
                .decision
                .raw_block
                .as_ref()
                .map(|b| b.reasoning.chars().take(80).collect())
                .unwrap_or_default();
            format!(
                "{}. Request: \"{}\" | Chose: {} | {} | Reasoning: {}",
                i + 1,
                j.scenario.request,
                chosen,
                if j.correct { "CORRECT" } else { "INCORRECT" },
                reasoning
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub correct_old: usize,
    pub correct_new: usize,
    pub total: usize,
    pub accepted: bool,
    /// True when nothing was processed since the last update.
    pub vacuous: bool,
}

impl Verification {
    pub fn acc_old(&self) -> f64 {
        ratio(self.correct_old, self.total)
    }

    pub fn acc_new(&self) -> f64 {
        ratio(self.correct_new, self.total)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Events of an adaptive run, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AdaptiveEvent {
    Batch {
        counter: usize,
        size: usize,
        accuracy: f64,
        rule_version: u32,
    },
    Gate(GateEvent),
    CriticQuestion {
        counter: usize,
        question: String,
    },
    CriticAnswer {
        counter: usize,
        answer: String,
    },
    CriticExit {
        counter: usize,
        exit: CriticExit,
    },
    Verification {
        counter: usize,
        #[serde(flatten)]
        result: Verification,
    },
    RulesUpdated {
        counter: usize,
        version: u32,
        rules: Vec<String>,
    },
}

#[derive(Debug, Clone, Default)]
pub struct AdaptiveOutcome {
    pub final_rules: RuleSet,
    pub decisions: Vec<Decision>,
    pub correctness: Vec<bool>,
    pub batch_accuracies: Vec<f64>,
    pub gate_events: Vec<GateEvent>,
    pub verifications: Vec<Verification>,
    pub rule_versions: Vec<RuleSet>,
    pub events: Vec<AdaptiveEvent>,
}

impl AdaptiveOutcome {
    pub fn accuracy(&self) -> f64 {
        ratio(
            self.correctness.iter().filter(|c| **c).count(),
            self.correctness.len(),
        )
    }

    pub fn proposals(&self) -> usize {
        self.verifications.len()
    }

    pub fn accepted(&self) -> usize {
        self.verifications.iter().filter(|v| v.accepted).count()
    }
}

/// Runs the adaptive loop over one scenario stream.
pub struct AdaptiveRunner<'a> {
    pub engine: &'a InferenceEngine,
    pub params: AdaptiveParams,
    pub channel: &'a mut dyn UserChannel,
    pub judge: &'a mut dyn Judge,
    pub observer: Option<&'a mut dyn FnMut(&AdaptiveEvent)>,
}

impl<'a> AdaptiveRunner<'a> {
    pub fn new(
        engine: &'a InferenceEngine,
        params: AdaptiveParams,
        channel: &'a mut dyn UserChannel,
        judge: &'a mut dyn Judge,
    ) -> Self {
        AdaptiveRunner {
            engine,
            params,
            channel,
            judge,
            observer: None,
        }
    }

    pub fn with_observer(mut self, observer: &'a mut dyn FnMut(&AdaptiveEvent)) -> Self {
        self.observer = Some(observer);
        self
    }

    fn emit(&mut self, out: &mut AdaptiveOutcome, event: AdaptiveEvent) {
        if let Some(obs) = self.observer.as_mut() {
            obs(&event);
        }
        out.events.push(event);
    }

    /// Batches never straddle a multiple of the feedback interval, so the
    /// gate is evaluated exactly at every multiple.
    pub fn run(mut self, initial: RuleSet, stream: &[Scenario]) -> Result<AdaptiveOutcome> {
        self.params.validate()?;
        let (k, f) = (self.params.batch_size, self.params.feedback_interval);
        let mut out = AdaptiveOutcome {
            final_rules: initial.clone(),
            rule_versions: vec![initial],
            ..Default::default()
        };
        let mut since: Vec<Judged> = Vec::new();
        let mut window: Vec<Judged> = Vec::new();
        let mut counter = 0;
        let mut pos = 0;
        while pos < stream.len() {
            let size = k.min(f - counter % f).min(stream.len() - pos);
            let batch = &stream[pos..pos + size];
            pos += size;
            let rules = out.final_rules.clone();
            let outcome = self.engine.select_actions(
                batch,
                &Conditioning::Rules(rules.clone()),
                tags::INFERENCE,
            )?;
            let mut correct = 0;
            for (s, d) in batch.iter().zip(outcome.decisions) {
                let ok = self.judge.judge(s, &d)?;
                correct += usize::from(ok);
                out.correctness.push(ok);
                let judged = Judged {
                    scenario: s.clone(),
                    decision: d.clone(),
                    correct: ok,
                };
                since.push(judged.clone());
                window.push(judged);
                out.decisions.push(d);
            }
            let acc = correct as f64 / size as f64;
            out.batch_accuracies.push(acc);
            counter += size;
            self.emit(
                &mut out,
                AdaptiveEvent::Batch {
                    counter,
                    size,
                    accuracy: acc,
                    rule_version: rules.version,
                },
            );
            if counter % f != 0 {
                continue;
            }
            let gate = intervention_gate(&out.batch_accuracies, acc, self.params.alpha, counter);
            out.gate_events.push(gate.clone());
            self.emit(&mut out, AdaptiveEvent::Gate(gate.clone()));
            let view = std::mem::take(&mut window);
            if !gate.triggered {
                continue;
            }
            let critic = critic_cycle(self.engine, &rules, &view, self.channel)?;
            if let Some(q) = &critic.question {
                self.emit(
                    &mut out,
                    AdaptiveEvent::CriticQuestion {
                        counter,
                        question: q.clone(),
                    },
                );
            }
            if let Some(a) = &critic.answer {
                self.emit(
                    &mut out,
                    AdaptiveEvent::CriticAnswer {
                        counter,
                        answer: a.clone(),
                    },
                );
            }
            self.emit(
                &mut out,
                AdaptiveEvent::CriticExit {
                    counter,
                    exit: critic.exit,
                },
            );
            let Some(proposal) = critic.proposal else {
                continue;
            };
            let result = if self.params.verify {
                verification_gate(self.engine, &proposal, &since, k, self.judge)?
            } else {
                let correct_old = since.iter().filter(|j| j.correct).count();
                Verification {
                    correct_old,
                    correct_new: correct_old,
                    total: since.len(),
                    accepted: true,
                    vacuous: since.is_empty(),
                }
            };
            out.verifications.push(result.clone());
            self.emit(
                &mut out,
                AdaptiveEvent::Verification {
                    counter,
                    result: result.clone(),
                },
            );
            if result.accepted {
                let mut next = proposal;
                next.version = rules.version + 1;
                since.clear();
                self.emit(
                    &mut out,
                    AdaptiveEvent::RulesUpdated {
                        counter,
                        version: next.version,
                        rules: next.rules().to_vec(),
                    },
                );
                out.rule_versions.push(next.clone());
                out.final_rules = next;
            }
        }
        Ok(out)
    }
}

/// Re-runs selection on `since` under the proposal and accepts iff it gets
/// at least as many right as the current rules did.
pub fn verification_gate(
    engine: &InferenceEngine,
    proposal: &RuleSet,
    since: &[Judged],
    batch_size: usize,
    judge: &mut dyn Judge,
) -> Result<Verification> {
    if since.is_empty() {
        return Ok(Verification {
            correct_old: 0,
            correct_new: 0,
            total: 0,
            accepted: true,
            vacuous: true,
        });
    }
    let correct_old = since.iter().filter(|j| j.correct).count();
    let conditioning = Conditioning::Rules(proposal.clone());
    let mut correct_new = 0;
    for chunk in since.chunks(batch_size.max(1)) {
        let scenarios: Vec<Scenario> = chunk.iter().map(|j| j.scenario.clone()).collect();
        let outcome = engine.select_actions(&scenarios, &conditioning, tags::VERIFICATION)?;
        for (s, d) in scenarios.iter().zip(&outcome.decisions) {
            correct_new += usize::from(judge.rejudge(s, d)?);
        }
    }
    Ok(Verification {
        correct_old,
        correct_new,
        total: since.len(),
        accepted: correct_new >= correct_old,
        vacuous: false,
    })
}

/// Assess, query the user, decide, and (maybe) rewrite the rules.
pub fn critic_cycle(
    engine: &InferenceEngine,
    rules: &RuleSet,
    window: &[Judged],
    channel: &mut dyn UserChannel,
) -> Result<CriticOutcome> {
    let g = engine.gateway();
    let t = engine.templates();
    let correct = window.iter().filter(|j| j.correct).count();
    let total = window.len();
    let acc_pct = format!("{:.0}", 100.0 * ratio(correct, total));
    let (correct_s, total_s) = (correct.to_string(), total.to_string());
    let rules_text = rules.prompt_text();

    let assess = t.render(
        TemplateName::CriticAssess,
        &[
            ("correct", &correct_s),
            ("total", &total_s),
            ("acc_pct", &acc_pct),
            ("rules", &rules_text),
        ],
    )?;
    let Some(investigate) = ask_parsed(engine, &assess, |r| {
        parse_yes_no(r, markers::INVESTIGATE_FAILURES)
    })?
    else {
        return Ok(CriticOutcome::exit(CriticExit::ParseFailure, None, None));
    };
    if !investigate {
        return Ok(CriticOutcome::exit(CriticExit::NoGap, None, None));
    }

    let query = t.render(
        TemplateName::CriticQuery,
        &[
            ("correct", &correct_s),
            ("total", &total_s),
            ("acc_pct", &acc_pct),
            ("rules", &rules_text),
            ("scenario_list", &render_window(window)),
        ],
    )?;
    let reply = g.ask(tags::CRITIC, query)?.text;
    let question = parse_section(&reply, markers::QUESTION_FOR_USER)
        .unwrap_or_else(|_| reply.trim().to_string());
    if question.is_empty() {
        return Ok(CriticOutcome::exit(CriticExit::NoQuestion, None, None));
    }
    let answer = match channel.answer(&question) {
        Ok(a) => a,
        Err(Error::Channel(_)) => {
            return Ok(CriticOutcome::exit(
                CriticExit::UserUnavailable,
                Some(question),
                None,
            ))
        }
        Err(e) => return Err(e),
    };

    let qa = [
        ("question", question.as_str()),
        ("answer", answer.as_str()),
        ("rules", rules_text.as_str()),
    ];
    let should = t.render(TemplateName::CriticShouldUpdate, &qa)?;
    let Some(update) = ask_parsed(engine, &should, |r| {
        parse_yes_no(r, markers::WANT_TO_UPDATE_RULES)
    })?
    else {
        return Ok(CriticOutcome::exit(
            CriticExit::ParseFailure,
            Some(question),
            Some(answer),
        ));
    };
    if !update {
        return Ok(CriticOutcome::exit(
            CriticExit::Declined,
            Some(question),
            Some(answer),
        ));
    }

    let rewrite = t.render(TemplateName::CriticUpdate, &qa)?;
    let parsed = ask_parsed(engine, &rewrite, |r| {
        let body = parse_section(r, markers::UPDATED_RULES).unwrap_or_else(|_| r.to_string());
        parse_numbered_rules(&body)
    })?;
    let Some(new_rules) = parsed else {
        return Ok(CriticOutcome::exit(
            CriticExit::ParseFailure,
            Some(question),
            Some(answer),
        ));
    };
    let proposal = RuleSet::new(
        new_rules,
        rules.version,
        RuleOrigin::CriticUpdate,
        g.model_id(),
    )?;
    Ok(CriticOutcome {
        exit: CriticExit::Proposed,
        question: Some(question),
        answer: Some(answer),
        proposal: Some(proposal),
    })
}

/// One critic call plus at most one repair; `None` when both replies fail to parse.
fn ask_parsed<T>(
    engine: &InferenceEngine,
    prompt: &str,
    parse: impl Fn(&str) -> Result<T>,
) -> Result<Option<T>> {
    let g = engine.gateway();
    if let Ok(v) = parse(&g.ask(tags::CRITIC, prompt)?.text) {
        return Ok(Some(v));
    }
    Ok(parse(
        &g.ask(tags::CRITIC, format!("{prompt}{REPAIR_SUFFIX}"))?
            .text,
    )
    .ok())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::elicitation::FixedAnswers;
    use crate::prompts::TemplateSet;
    use crate::simulation::{install_mock, MockScript};

    #[test]
    fn stats_oracle_values() {
        // Reference values from an independent population-statistics routine.
        let (mu, sigma) = history_stats(&[0.8, 0.6, 0.2]).unwrap();
        assert_abs_diff_eq!(mu, 0.533_333_333, epsilon = 1e-6);
        assert_abs_diff_eq!(sigma, 0.249_443_826, epsilon = 1e-6);
        let (mu, sigma) = history_stats(&[1.0, 1.0, 1.0, 0.2]).unwrap();
        assert_abs_diff_eq!(mu, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma, 0.346_410_161, epsilon = 1e-6);
        assert_eq!(history_stats(&[0.9, 0.9, 0.9]).unwrap(), (0.9, 0.0));
        assert!(matches!(
            history_stats(&[]),
            Err(Error::StatsUnavailable(_))
        ));
    }

    #[test]
    fn gate_cases() {
        assert_eq!(
            intervention_gate(&[0.4], 0.4, 1.5, 10).reason,
            GateReason::ColdStart
        );
        assert!(!intervention_gate(&[0.9, 0.9, 0.9], 0.9, 1.5, 30).triggered);
        let g = intervention_gate(&[1.0, 1.0, 1.0, 0.2], 0.2, 1.5, 40);
        assert_eq!(g.reason, GateReason::Anomaly);
        assert!(!intervention_gate(&[0.8, 0.6, 0.2], 0.2, 1.5, 30).triggered);
    }

    #[test]
    fn params_require_interval_at_least_batch() {
        let p = AdaptiveParams {
            batch_size: 10,
            feedback_interval: 5,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    fn engine(script: MockScript) -> InferenceEngine {
        InferenceEngine::new(install_mock("m", script), Arc::new(TemplateSet::builtin()))
    }

    fn judged(correct: bool) -> Judged {
        let s = Scenario::new(
            "w",
            "Kitchen",
            "Bring a drink",
            ["Hot tea", "Iced tea"],
            Some(2),
        );
        Judged {
            decision: Decision {
                scenario_id: "w".into(),
                shown_order: vec![1, 2],
                raw_action: Some(1),
                chosen_original_index: Some(if correct { 2 } else { 1 }),
                raw_block: None,
                correct: Some(correct),
                rule_version: None,
                error: None,
            },
            scenario: s,
            correct,
        }
    }

    #[test]
    fn assess_no_exits_before_querying_user() {
        let e = engine(MockScript::fixed("INVESTIGATE_FAILURES: NO"));
        let mut ch = FixedAnswers::new(["cold"], "");
        let out = critic_cycle(&e, &RuleSet::empty(), &[judged(false)], &mut ch).unwrap();
        assert_eq!(out.exit, CriticExit::NoGap);
        assert!(ch.asked.is_empty());
        assert_eq!(e.gateway().ledger_count(Some(tags::CRITIC)), 1);
    }

    #[test]
    fn declined_update_yields_no_proposal() {
        let script = MockScript::new("QUESTION_FOR_USER: Hot or cold?")
            .on_contains("INVESTIGATE_FAILURES", "INVESTIGATE_FAILURES: YES")
            .on_contains("WANT_TO_UPDATE_RULES", "WANT_TO_UPDATE_RULES: NO");
        let e = engine(script);
        let mut ch = FixedAnswers::new(["It depends"], "");
        let out = critic_cycle(&e, &RuleSet::empty(), &[judged(false)], &mut ch).unwrap();
        assert_eq!(out.exit, CriticExit::Declined);
        assert_eq!(ch.asked, ["Hot or cold?"]);
        assert!(out.proposal.is_none());
    }

    #[test]
    fn full_yes_path_proposes_complete_list() {
        let script = MockScript::new("QUESTION_FOR_USER: Healthy or sweet drinks?")
            .on_contains("INVESTIGATE_FAILURES", "INVESTIGATE_FAILURES: YES")
            .on_contains("WANT_TO_UPDATE_RULES", "WANT_TO_UPDATE_RULES: YES")
            .on_contains(
                "UPDATED_RULES",
                "UPDATED_RULES:\n1. For drinks, prioritize option that is both healthy and cold",
            );
        let e = engine(script);
        let mut ch = FixedAnswers::new(["Healthy and cold"], "");
        let out = critic_cycle(&e, &RuleSet::empty(), &[judged(false)], &mut ch).unwrap();
        let p = out.proposal.unwrap();
        assert_eq!(
            p.rules(),
            ["For drinks, prioritize option that is both healthy and cold"]
        );
        assert_eq!(p.origin, RuleOrigin::CriticUpdate);
    }

    #[test]
    fn verification_is_inclusive_and_vacuous_on_empty() {
        // proposal always picks displayed position 1
        let e = engine(MockScript::fixed("SCENARIO 1:\nAction: 1\n"));
        let proposal = RuleSet::new(vec!["x".into()], 1, RuleOrigin::CriticUpdate, "m").unwrap();
        let v = verification_gate(&e, &proposal, &[], 10, &mut LabelJudge).unwrap();
        assert!(v.accepted && v.vacuous);

        let s = Scenario::new("v1", "Kitchen", "Bring a drink", ["Hot tea"], Some(1));
        let mut j = judged(true);
        j.scenario = s;
        let v = verification_gate(&e, &proposal, &[j.clone()], 10, &mut LabelJudge).unwrap();
        assert_eq!((v.correct_old, v.correct_new), (1, 1));
        assert!(v.accepted);

        let hidden = crate::inference::deterministic_shuffle("v2", "m", 2)[1];
        j.scenario = Scenario::new(
            "v2",
            "Kitchen",
            "Bring a drink",
            ["Hot tea", "Iced tea"],
            Some(hidden),
        );
        let v = verification_gate(&e, &proposal, &[j], 10, &mut LabelJudge).unwrap();
        assert_eq!(v.correct_new, 0);
        assert!(!v.accepted);
    }
}
