//! Command implementations behind the CLI: building gateways and channels
//! from a [`RunConfig`], running methods, and persisting everything to a
//! [`RunStore`].

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::{self, Cipher, CipherMemory, Method, RetrievalMode};
use crate::config::{ChannelConfigKind, InitialRules, ProviderKind, RunConfig};
use crate::critic::{AdaptiveEvent, AdaptiveOutcome, AdaptiveRunner, LabelJudge};
use crate::elicitation::{ChannelKind, ElicitationSession, Elicitor, UserChannel};
use crate::error::{Error, Result};
use crate::forge::{self, HierarchySet, MatchReport, RuleChain, UnifyMode};
use crate::gateway::{Gateway, OpenAiCompatible, RetryPolicy};
use crate::inference::{Conditioning, Decision, InferenceEngine};
use crate::metrics::{self, MethodReport, NamedTest, Report, SigTest};
use crate::model::{
    load_scenarios, strip_answers, ExampleSet, PreferenceProfile, RuleOrigin, RuleSet, Scenario,
    Tier,
};
use crate::prompts::{parse_numbered_rules, TemplateSet};
use crate::simulation::{
    install_mock, load_topics, HeuristicModel, MockScript, SimulatedUser, Stance,
};
use crate::store::{self, RunStore};

/// Train/test scenarios and the simulated user's profile.
#[derive(Debug, Clone, Default)]
pub struct Data {
    pub train: Vec<Scenario>,
    pub test: Vec<Scenario>,
    pub profile: Option<PreferenceProfile>,
}

impl Data {
    pub fn examples(&self) -> ExampleSet {
        strip_answers(&self.train)
    }

    pub fn tiers(&self) -> HashMap<String, Tier> {
        self.test.iter().map(|s| (s.id.clone(), s.tier)).collect()
    }
}

pub fn build_gateway(cfg: &RunConfig, model_id: &str) -> Result<Gateway> {
    let m = &cfg.model;
    match m.provider {
        ProviderKind::Heuristic => {
            let path = m
                .topics
                .as_ref()
                .ok_or_else(|| Error::Config("model.topics is required".into()))?;
            let mut model = HeuristicModel::new(model_id, load_topics(path)?);
            if m.slip > 0 {
                model = model.with_slip(m.slip);
            }
            Ok(Gateway::new(Arc::new(model)).with_retry(RetryPolicy::immediate(1)))
        }
        ProviderKind::Mock => {
            let path = m
                .script
                .as_ref()
                .ok_or_else(|| Error::Config("model.script is required".into()))?;
            let mut script = MockScript::load(path)?;
            // Unscripted requests fall through to the heuristic model.
            if let Some(topics) = &m.topics {
                let mut model = HeuristicModel::new(model_id, load_topics(topics)?);
                if m.slip > 0 {
                    model = model.with_slip(m.slip);
                }
                script = script.with_fallback(Arc::new(model));
            }
            Ok(install_mock(model_id, script))
        }
        ProviderKind::Openai => {
            let endpoint = m
                .endpoint
                .as_ref()
                .ok_or_else(|| Error::Config("model.endpoint is required".into()))?;
            let key = std::env::var(&m.api_key_env).map_err(|_| {
                Error::Config(format!("environment variable {} is not set", m.api_key_env))
            })?;
            let mut client = OpenAiCompatible::new(endpoint, model_id, key)
                .map_err(|e| Error::Provider(format!("{e:?}")))?;
            let embeds = m.embedding_model.is_some();
            if let Some(em) = &m.embedding_model {
                client = client.with_embedding_model(em);
            }
            let client = Arc::new(client);
            let mut g = Gateway::new(client.clone());
            if embeds {
                g = g.with_embedder(client);
            }
            Ok(g)
        }
    }
}

pub fn load_templates(cfg: &RunConfig) -> Result<Arc<TemplateSet>> {
    Ok(Arc::new(match &cfg.model.templates_dir {
        Some(dir) => TemplateSet::load_dir(dir, cfg.model.dataset_tag.as_deref())?,
        None => TemplateSet::builtin(),
    }))
}

pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    let d = &cfg.dataset;
    let mut data = Data::default();
    if let Some(manifest) = &d.manifest {
        let k = forge::load_kitchenambig(manifest)?;
        data.profile = k.profile()?;
        data.train = k.train;
        data.test = k.test;
    }
    if let Some(p) = &d.train {
        data.train = load_scenarios(p)?;
    }
    if let Some(p) = &d.test {
        data.test = load_scenarios(p)?;
    }
    if let Some(p) = &d.housekeep {
        data.test = forge::load_housekeep(p)?;
    }
    if let Some(n) = d.max_examples {
        data.train.truncate(n);
    }
    if let Some(p) = &cfg.channel.profile {
        data.profile = Some(PreferenceProfile::load(p)?);
    }
    Ok(data)
}

/// Questions on stdout, answers from stdin.
#[derive(Debug)]
pub struct ConsoleChannel {
    _private: (),
}

impl ConsoleChannel {
    /// Fails when stdin is not an interactive terminal.
    pub fn attach() -> Result<Self> {
        if !std::io::stdin().is_terminal() {
            return Err(Error::Channel(
                "console channel needs an interactive terminal on stdin".into(),
            ));
        }
        Ok(ConsoleChannel { _private: () })
    }
}

impl UserChannel for ConsoleChannel {
    fn kind(&self) -> ChannelKind {
        ChannelKind::LiveSession
    }

    fn answer(&mut self, question: &str) -> Result<String> {
        let mut out = std::io::stdout();
        writeln!(out, "\n{question}\n> ").map_err(|e| Error::Channel(e.to_string()))?;
        out.flush().map_err(|e| Error::Channel(e.to_string()))?;
        let mut line = String::new();
        let n = std::io::stdin()
            .lock()
            .read_line(&mut line)
            .map_err(|e| Error::Channel(e.to_string()))?;
        if n == 0 {
            return Err(Error::Channel("stdin closed".into()));
        }
        Ok(line.trim().to_string())
    }
}

pub fn make_channel(
    cfg: &RunConfig,
    data: &Data,
    gateway: &Gateway,
    templates: &TemplateSet,
    stance: Stance,
) -> Result<Box<dyn UserChannel>> {
    let profile = || {
        data.profile.clone().ok_or_else(|| {
            Error::Config("a simulated user needs a profile (channel.profile or manifest)".into())
        })
    };
    Ok(match cfg.channel.kind {
        ChannelConfigKind::Scripted => Box::new(SimulatedUser::scripted(profile()?, stance)),
        ChannelConfigKind::Llm => {
            let sim = match &cfg.channel.model_id {
                Some(id) if *id != cfg.model.model_id => build_gateway(cfg, id)?,
                _ => gateway.clone(),
            };
            Box::new(SimulatedUser::llm(
                profile()?,
                stance,
                sim,
                templates.clone(),
            ))
        }
        ChannelConfigKind::Console => Box::new(ConsoleChannel::attach()?),
    })
}

/// Reads a numbered rules file; `#` lines are ignored.
pub fn load_rules_file(path: &Path, source_model: &str) -> Result<RuleSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rules = parse_numbered_rules(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    RuleSet::new(rules, 1, RuleOrigin::External, source_model)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub report: Option<Report>,
    pub rules: Option<RuleSet>,
}

#[derive(Serialize)]
struct DecisionRow<'a> {
    method: &'a str,
    model: &'a str,
    #[serde(flatten)]
    decision: &'a Decision,
}

#[derive(Deserialize)]
struct StoredDecision {
    method: String,
    model: String,
    #[serde(flatten)]
    decision: Decision,
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn open_store(cfg: &RunConfig, command: &str, method: &str) -> Result<RunStore> {
    cfg.validate()?;
    let hash = cfg.hash();
    RunStore::create(
        &cfg.output_dir,
        &format!("{command}-{method}-{}", &hash[..12]),
        cfg,
    )
}

/// Elicits rules through `channel`, recording the session under `label`.
fn elicit_rules(
    cfg: &RunConfig,
    gateway: &Gateway,
    templates: &Arc<TemplateSet>,
    data: &Data,
    channel: &mut dyn UserChannel,
    store: &mut RunStore,
    label: &str,
) -> Result<RuleSet> {
    let budget = cfg.elicitation.budget;
    if budget == 0 {
        store.note("question budget is 0; rules are synthesized from an empty dialogue")?;
    }
    let elicitor = Elicitor::new(gateway.clone(), templates.clone());
    let mut session = ElicitationSession::new(data.examples(), budget);
    let result = elicitor.run(&mut session, channel);
    for e in session.events() {
        store.append_event(&json!({"scope": label, "session": e}))?;
    }
    store.write_transcript(&format!("transcript{label}.txt"), session.dialogue())?;
    result
}

fn label_suffix(parts: &[&str]) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .map(|p| format!("-{}", file_safe(p)))
        .collect()
}

pub fn cmd_elicit(cfg: &RunConfig) -> Result<RunOutput> {
    let mut store = open_store(cfg, "elicit", cfg.method.as_str())?;
    let templates = load_templates(cfg)?;
    let data = load_data(cfg)?;
    let gateway = build_gateway(cfg, &cfg.model.model_id)?;
    let stance = cfg.channel.elicitation_stance.unwrap_or(cfg.channel.stance);
    let mut channel = make_channel(cfg, &data, &gateway, &templates, stance)?;
    let rules = elicit_rules(
        cfg,
        &gateway,
        &templates,
        &data,
        channel.as_mut(),
        &mut store,
        "",
    )?;
    store.write_rules(&rules)?;
    store.write_ledger(gateway.ledger())?;
    store.append_event(&json!({"event": "run_finished", "rules": rules.len()}))?;
    Ok(RunOutput {
        dir: store.dir().to_path_buf(),
        report: None,
        rules: Some(rules),
    })
}

struct MethodRun {
    name: String,
    decisions: Vec<Decision>,
    batch_accuracies: Vec<f64>,
    rules_source: Option<String>,
}

fn initial_rules(
    cfg: &RunConfig,
    gateway: &Gateway,
    templates: &Arc<TemplateSet>,
    data: &Data,
    store: &mut RunStore,
    label: &str,
) -> Result<RuleSet> {
    let stance = cfg.channel.elicitation_stance.unwrap_or(cfg.channel.stance);
    let elicit = |store: &mut RunStore| -> Result<RuleSet> {
        let mut channel = make_channel(cfg, data, gateway, templates, stance)?;
        elicit_rules(
            cfg,
            gateway,
            templates,
            data,
            channel.as_mut(),
            store,
            label,
        )
    };
    match cfg.adaptive.initial {
        InitialRules::Elicit => elicit(store),
        InitialRules::Empty => Ok(RuleSet::empty()),
        InitialRules::Contradicted => {
            let rules = elicit(store)?;
            Elicitor::new(gateway.clone(), templates.clone()).contradict_rules(&rules)
        }
        InitialRules::File => {
            let path = cfg.adaptive.rules_file.as_ref().ok_or_else(|| {
                Error::Config("adaptive.initial = \"file\" needs adaptive.rules_file".into())
            })?;
            let source = cfg
                .evaluate
                .rules_source_model
                .clone()
                .unwrap_or_else(|| gateway.model_id().to_string());
            load_rules_file(path, &source)
        }
    }
}

fn adaptive_name(cfg: &RunConfig) -> &'static str {
    if cfg.adaptive.verify {
        "adaptive"
    } else {
        "adaptive_nongated"
    }
}

fn run_adaptive(
    cfg: &RunConfig,
    gateway: &Gateway,
    templates: &Arc<TemplateSet>,
    data: &Data,
    store: &mut RunStore,
    label: &str,
) -> Result<AdaptiveOutcome> {
    let initial = initial_rules(cfg, gateway, templates, data, store, label)?;
    store.write_rules_as(&format!("v{}{label}", initial.version), &initial)?;
    let engine = InferenceEngine::new(gateway.clone(), templates.clone());
    let mut channel = make_channel(cfg, data, gateway, templates, cfg.channel.stance)?;
    let mut judge = LabelJudge;
    let mut failed: Option<Error> = None;
    let outcome = {
        let mut observe = |e: &AdaptiveEvent| {
            if failed.is_none() {
                if let Err(err) = store.append_event(&json!({"scope": label, "adaptive": e})) {
                    failed = Some(err);
                }
            }
        };
        AdaptiveRunner::new(&engine, cfg.adaptive.params(), channel.as_mut(), &mut judge)
            .with_observer(&mut observe)
            .run(initial, &data.test)?
    };
    if let Some(e) = failed {
        return Err(e);
    }
    for r in outcome.rule_versions.iter().filter(|r| r.version > 0) {
        store.write_rules_as(&format!("v{}{label}", r.version), r)?;
    }
    let mut gates = String::from("at_counter,triggered,mu,sigma,current_acc,reason\n");
    for g in &outcome.gate_events {
        gates.push_str(&format!(
            "{},{},{},{},{},{}\n",
            g.at_counter,
            g.triggered,
            g.mu,
            g.sigma,
            g.current_acc,
            serde_json::to_value(g.reason)?.as_str().unwrap_or_default()
        ));
    }
    store.write_text(&format!("gates{label}.csv"), &gates)?;
    Ok(outcome)
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    cfg: &RunConfig,
    method: Method,
    gateway: &Gateway,
    templates: &Arc<TemplateSet>,
    data: &Data,
    store: &mut RunStore,
    label: &str,
) -> Result<MethodRun> {
    let bs = cfg.evaluate.batch_size;
    let engine = InferenceEngine::new(gateway.clone(), templates.clone());
    let stance = cfg.channel.stance;
    let mut rules_source = None;
    let stream = match method {
        Method::ZeroShot => baselines::zero_shot(&engine, &data.test, bs)?,
        Method::Icl => baselines::icl(&engine, &data.test, &data.examples(), bs)?,
        Method::IclAnswers => baselines::icl_answers(&engine, &data.test, &data.train, bs)?,
        Method::Tidybot => {
            let rules = baselines::tidybot_summarize(gateway, templates, &data.train)?;
            store.write_rules_as(&format!("summary{label}"), &rules)?;
            engine.evaluate_stream(&data.test, &Conditioning::Rules(rules), bs)?
        }
        Method::Gate => {
            let mut channel = make_channel(cfg, data, gateway, templates, stance)?;
            let transcript = baselines::gate_elicit(
                gateway,
                templates,
                &data.examples(),
                channel.as_mut(),
                cfg.baselines.turn_budget,
            )?;
            store.write_transcript(&format!("transcript{label}.txt"), &transcript)?;
            baselines::gate_evaluate(&engine, &data.test, &transcript, bs)?
        }
        Method::CipherLevenshtein | Method::CipherCosine => {
            let mode = if method == Method::CipherCosine {
                RetrievalMode::Cosine
            } else {
                RetrievalMode::Levenshtein
            };
            let mut channel = make_channel(cfg, data, gateway, templates, stance)?;
            let mut memory =
                CipherMemory::new(mode, cfg.baselines.top_k, cfg.baselines.correction_budget)?;
            let run =
                Cipher::new(gateway, templates).run(&mut memory, &data.test, channel.as_mut())?;
            store.append_event(&json!({
                "scope": label,
                "event": "cipher_finished",
                "memory": memory.len(),
                "user_corrections": run.user_corrections,
                "inductions": run.inductions,
            }))?;
            return Ok(MethodRun {
                name: method.as_str().to_string(),
                decisions: run.decisions,
                batch_accuracies: Vec::new(),
                rules_source: None,
            });
        }
        Method::Rules => {
            let rules = match &cfg.evaluate.rules_file {
                Some(path) => {
                    let source = cfg
                        .evaluate
                        .rules_source_model
                        .clone()
                        .unwrap_or_else(|| "external".to_string());
                    rules_source = Some(source.clone());
                    load_rules_file(path, &source)?
                }
                None => {
                    let mut channel = make_channel(
                        cfg,
                        data,
                        gateway,
                        templates,
                        cfg.channel.elicitation_stance.unwrap_or(stance),
                    )?;
                    elicit_rules(
                        cfg,
                        gateway,
                        templates,
                        data,
                        channel.as_mut(),
                        store,
                        label,
                    )?
                }
            };
            store.write_rules_as(&format!("v{}{label}", rules.version), &rules)?;
            engine.evaluate_stream(&data.test, &Conditioning::Rules(rules), bs)?
        }
        Method::Adaptive => {
            let out = run_adaptive(cfg, gateway, templates, data, store, label)?;
            return Ok(MethodRun {
                name: adaptive_name(cfg).to_string(),
                decisions: out.decisions,
                batch_accuracies: out.batch_accuracies,
                rules_source: None,
            });
        }
    };
    Ok(MethodRun {
        name: method.as_str().to_string(),
        decisions: stream.decisions,
        batch_accuracies: stream.batch_accuracies,
        rules_source,
    })
}

/// Runs the configured methods for the executor model and every sweep model.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<RunOutput> {
    let methods = if cfg.evaluate.methods.is_empty() {
        vec![cfg.method]
    } else {
        cfg.evaluate.methods.clone()
    };
    let name = if methods.len() == 1 {
        methods[0].as_str()
    } else {
        "multi"
    };
    let mut store = open_store(cfg, "evaluate", name)?;
    let templates = load_templates(cfg)?;
    let data = load_data(cfg)?;
    if data.test.is_empty() {
        return Err(Error::Config("no test scenarios configured".into()));
    }
    if let Some(s) = data.test.iter().find(|s| s.preferred.is_none()) {
        return Err(Error::Config(format!(
            "test scenario {} is unlabeled",
            s.id
        )));
    }
    let tiers = data.tiers();
    let mut models = vec![cfg.model.model_id.clone()];
    models.extend(
        cfg.model
            .sweep
            .iter()
            .filter(|m| **m != cfg.model.model_id)
            .cloned(),
    );
    let multi = models.len() > 1 || methods.len() > 1;

    let mut reports = Vec::new();
    let mut rows = Vec::new();
    let mut ledgers = BTreeMap::new();
    for model in &models {
        let base = build_gateway(cfg, model)?;
        for &method in &methods {
            let g = base.fork();
            let label = if multi {
                label_suffix(&[method.as_str(), model])
            } else {
                String::new()
            };
            let run = run_method(cfg, method, &g, &templates, &data, &mut store, &label)?;
            let mut report = MethodReport::build(
                &run.name,
                model,
                &run.decisions,
                &tiers,
                g.ledger().llm_calls(),
            )
            .with_batches(run.batch_accuracies);
            report.rules_source = run.rules_source;
            store.append_event(&json!({
                "event": "method_finished",
                "method": run.name,
                "model": model,
                "accuracy": report.accuracy,
                "llm_calls": report.llm_calls,
            }))?;
            for d in &run.decisions {
                rows.push(serde_json::to_value(DecisionRow {
                    method: &run.name,
                    model,
                    decision: d,
                })?);
            }
            ledgers.insert(
                format!("{}/{}", run.name, model),
                json!({
                    "llm_calls": g.ledger().llm_calls(),
                    "by_tag": g.ledger().tag_counts(),
                    "entries": g.ledger().snapshot(),
                }),
            );
            reports.push(report);
        }
    }
    store.write_ndjson("decisions.ndjson", &rows)?;
    store.write_json(
        "ledger.json",
        &json!({"config_hash": store.config_hash(), "runs": ledgers}),
    )?;
    let mut report = Report::new(reports);
    add_comparisons(&mut report, &decisions_by_run(&rows)?);
    store.write_report(&report)?;
    store.append_event(&json!({"event": "run_finished"}))?;
    Ok(RunOutput {
        dir: store.dir().to_path_buf(),
        report: Some(report),
        rules: None,
    })
}

/// Runs the adaptive loop once with the configured initial rules and gating mode.
pub fn cmd_adapt(cfg: &RunConfig) -> Result<RunOutput> {
    let name = adaptive_name(cfg);
    let mut store = open_store(cfg, "adapt", name)?;
    let templates = load_templates(cfg)?;
    let data = load_data(cfg)?;
    if let Some(s) = data.test.iter().find(|s| s.preferred.is_none()) {
        return Err(Error::Config(format!(
            "test scenario {} is unlabeled",
            s.id
        )));
    }
    let gateway = build_gateway(cfg, &cfg.model.model_id)?;
    let out = run_adaptive(cfg, &gateway, &templates, &data, &mut store, "")?;
    let rows = out
        .decisions
        .iter()
        .map(|d| {
            serde_json::to_value(DecisionRow {
                method: name,
                model: gateway.model_id(),
                decision: d,
            })
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    store.write_ndjson("decisions.ndjson", &rows)?;
    store.write_json("verifications.json", &out.verifications)?;
    store.write_ledger(gateway.ledger())?;
    let report = Report::new(vec![MethodReport::build(
        name,
        gateway.model_id(),
        &out.decisions,
        &data.tiers(),
        gateway.ledger().llm_calls(),
    )
    .with_batches(out.batch_accuracies.clone())]);
    store.write_report(&report)?;
    store.append_event(&json!({
        "event": "run_finished",
        "proposals": out.proposals(),
        "accepted": out.accepted(),
        "final_version": out.final_rules.version,
    }))?;
    Ok(RunOutput {
        dir: store.dir().to_path_buf(),
        report: Some(report),
        rules: Some(out.final_rules),
    })
}

type RunKey = (String, String);

fn decisions_by_run(rows: &[serde_json::Value]) -> Result<BTreeMap<RunKey, Vec<Decision>>> {
    let mut out: BTreeMap<RunKey, Vec<Decision>> = BTreeMap::new();
    for r in rows {
        let s: StoredDecision = serde_json::from_value(r.clone())?;
        out.entry((s.method, s.model)).or_default().push(s.decision);
    }
    Ok(out)
}

/// Adds the gating delta and per-model McNemar tests against zero-shot, plus
/// an independent t-test of rules vs zero-shot accuracy across models.
fn add_comparisons(report: &mut Report, decisions: &BTreeMap<RunKey, Vec<Decision>>) {
    let models: Vec<String> = {
        let mut m: Vec<String> = decisions.keys().map(|(_, m)| m.clone()).collect();
        m.dedup();
        m.sort();
        m.dedup();
        m
    };
    for model in &models {
        let get = |method: &str| decisions.get(&(method.to_string(), model.clone()));
        if let (Some(g), Some(ng)) = (get("adaptive"), get("adaptive_nongated")) {
            let baseline = get("rules").or(get("zero_shot"));
            if let Some(b) = baseline {
                if let Ok(delta) = metrics::gating_delta(g, ng, b) {
                    report.gating.get_or_insert(delta);
                }
            }
        }
        let Some(zs) = get("zero_shot") else { continue };
        let zs_ok = metrics::correctness(zs);
        for ((method, m), ds) in decisions {
            if m != model || method == "zero_shot" {
                continue;
            }
            let ok = metrics::correctness(ds);
            if ok.len() != zs_ok.len() {
                continue;
            }
            if let Ok(result) = metrics::mcnemar(&ok, &zs_ok) {
                report.tests.push(NamedTest {
                    label: format!("mcnemar {method} vs zero_shot [{model}]"),
                    result,
                });
            }
        }
    }
    let acc = |method: &str| -> Vec<f64> {
        report
            .methods
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.accuracy)
            .collect()
    };
    let (rules, zs) = (acc("rules"), acc("zero_shot"));
    if rules.len() >= 2 && zs.len() >= 2 {
        if let Ok(result) = metrics::significance(SigTest::IndependentT, &rules, &zs) {
            report.tests.push(NamedTest {
                label: "independent_t rules vs zero_shot across models".into(),
                result,
            });
        }
    }
}

/// Merges the reports of several run directories into one.
pub fn cmd_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Report> {
    if run_dirs.is_empty() {
        return Err(Error::Config(
            "report needs at least one run directory".into(),
        ));
    }
    let mut methods = Vec::new();
    let mut rows = Vec::new();
    let mut sources = Vec::new();
    for dir in run_dirs {
        let r = store::read_report(dir)?;
        methods.extend(r.methods);
        if let Some(h) = r.metadata.get("config_hash") {
            sources.push(format!("{}={h}", dir.display()));
        }
        let path = dir.join("decisions.ndjson");
        if let Ok(text) = std::fs::read_to_string(&path) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                rows.push(serde_json::from_str(line)?);
            }
        }
    }
    let mut report = Report::new(methods);
    add_comparisons(&mut report, &decisions_by_run(&rows)?);
    report.metadata.insert("sources".into(), sources.join(";"));
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, text: String| {
        let p = out_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("report.json", report.to_json() + "\n")?;
    write("report.txt", report.to_text())?;
    write("series.csv", report.series_csv())?;
    Ok(report)
}

/// Relabels a raw scenario file; writes `scenarios.json` and `matches.json`.
pub fn cmd_forge_unify(
    input: &Path,
    mode: UnifyMode,
    hierarchies: Option<&Path>,
    rules: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<MatchReport>> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let hs = match hierarchies {
        Some(p) => HierarchySet::load(p)?,
        None => HierarchySet::builtin(),
    };
    let chain = match rules {
        Some(p) => RuleChain::load(p)?,
        None => RuleChain::builtin(),
    };
    let (scenarios, reports) =
        forge::unify_file(&text, &input.display().to_string(), mode, &hs, &chain)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, text: String| {
        let p = out_dir.join(name);
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    };
    write("scenarios.json", serde_json::to_string_pretty(&scenarios)?)?;
    write("matches.json", serde_json::to_string_pretty(&reports)?)?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(rel: &str) -> String {
        format!("{}/fixtures/{rel}", env!("CARGO_MANIFEST_DIR"))
    }

    fn config(method: &str, out: &Path, extra: &[&str]) -> RunConfig {
        let text = format!(
            "method = \"{method}\"\noutput_dir = \"{}\"\n[model]\nprovider = \"heuristic\"\ntopics = \"{}\"\n[dataset]\nmanifest = \"{}\"\n",
            out.display(),
            fixture("moderator_topics.json"),
            fixture("kitchen/manifest.json"),
        );
        let overrides: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        RunConfig::from_toml(&text, Path::new("/"), &overrides).unwrap()
    }

    #[test]
    fn console_channel_refuses_without_terminal() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config("rules", tmp.path(), &["channel.kind=\"console\""]);
        if std::io::stdin().is_terminal() {
            return;
        }
        assert!(matches!(cmd_elicit(&cfg), Err(Error::Channel(_))));
    }

    #[test]
    fn zero_budget_elicitation_is_logged() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config("rules", tmp.path(), &["elicitation.budget=0"]);
        let out = cmd_elicit(&cfg).unwrap();
        let events = std::fs::read_to_string(out.dir.join("events.ndjson")).unwrap();
        assert!(events.contains("empty dialogue"));
        assert!(!events.contains("\"question\""));
    }

    #[test]
    fn unlabeled_test_set_is_a_config_error() {
        let tmp = tempfile::tempdir().unwrap();
        let test = tmp.path().join("test.json");
        std::fs::write(
            &test,
            r#"[{"id":"u1","environment":"a kitchen","request":"a drink","candidates":["Cola","Tea"]}]"#,
        )
        .unwrap();
        let cfg = config(
            "zero_shot",
            tmp.path(),
            &[&format!("dataset.test=\"{}\"", test.display())],
        );
        assert!(matches!(cmd_evaluate(&cfg), Err(Error::Config(_))));
    }
    #[test]
    fn llm_simulator_can_use_its_own_model() {
        let tmp = tempfile::tempdir().unwrap();
        let templates = TemplateSet::builtin();
        for (extra, own) in [(None, false), (Some("channel.model_id=sim-2"), true)] {
            let mut sets = vec!["channel.kind=llm"];
            sets.extend(extra);
            let cfg = config("rules", tmp.path(), &sets);
            let data = load_data(&cfg).unwrap();
            let gateway = build_gateway(&cfg, &cfg.model.model_id).unwrap();
            let mut ch =
                make_channel(&cfg, &data, &gateway, &templates, Stance::Cooperative).unwrap();
            assert!(!ch.answer("Which milk do you like?").unwrap().is_empty());
            assert_eq!(
                gateway.ledger_count(Some(crate::gateway::tags::SIMULATOR)),
                usize::from(!own)
            );
        }
    }
}
