//! HTTP session API for live users.
//!
//! Each session binds one elicitation or one adaptive run. Clients create a
//! session, answer questions, and follow a server-sent event stream that can
//! be resumed with `Last-Event-ID`. Payload shapes are documented in
//! `docs/session-api.md`.

use std::collections::hash_map::RandomState;
use std::collections::HashMap;
use std::convert::Infallible;
use std::hash::{BuildHasher, Hasher};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;

use crate::config::RunConfig;
use crate::critic::{AdaptiveEvent, AdaptiveParams, AdaptiveRunner, Judge, LabelJudge};
use crate::elicitation::{
    ChannelKind, ElicitationSession, Elicitor, NextStep, SessionEvent, UserChannel,
};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::inference::{Decision, InferenceEngine};
use crate::model::{RuleOrigin, RuleSet, Scenario};
use crate::prompts::TemplateSet;
use crate::runner::{self, Data};

/// Idle time after which a session waiting for an answer is suspended.
pub const ANSWER_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Elicitation,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingAnswer,
    AwaitingFeedback,
    Running,
    Suspended,
    Synthesized,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEvent {
    pub id: u64,
    pub kind: String,
    pub data: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub role: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub counter: usize,
    pub last_batch_accuracy: Option<f64>,
    pub gate_events: usize,
}

/// `GET /sessions/{id}` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub mode: Mode,
    pub status: Status,
    pub transcript: Vec<TranscriptTurn>,
    pub pending_question: Option<String>,
    pub rules: Option<Vec<String>>,
    pub rules_version: Option<u32>,
    pub progress: Progress,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub mode: Option<Mode>,
    /// Question budget for elicitation; defaults to the config's.
    pub budget: Option<usize>,
    /// Adaptive only: judge decisions from user feedback instead of labels.
    #[serde(default)]
    pub feedback: bool,
    /// Adaptive only: initial rules; empty by default.
    #[serde(default)]
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerBody {
    pub text: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackBody {
    pub scenario_id: String,
    pub correct: bool,
}

struct Shared {
    log: Vec<ServerEvent>,
    status: Status,
    pending_question: Option<String>,
    transcript: Vec<TranscriptTurn>,
    rules: Option<RuleSet>,
    progress: Progress,
    error: Option<String>,
    last_active: Instant,
}

enum Machine {
    Elicitation {
        /// `None` while suspended; rebuilt from `events` on the next answer.
        session: Option<ElicitationSession>,
        events: Vec<SessionEvent>,
        budget: usize,
    },
    Adaptive {
        answers: mpsc::Sender<String>,
        feedback: mpsc::Sender<FeedbackBody>,
    },
}

pub struct Session {
    id: String,
    mode: Mode,
    shared: Mutex<Shared>,
    tx: broadcast::Sender<ServerEvent>,
    machine: tokio::sync::Mutex<Machine>,
    log_path: Option<PathBuf>,
}

impl Session {
    fn new(id: String, mode: Mode, machine: Machine, log_path: Option<PathBuf>) -> Self {
        let (tx, _) = broadcast::channel(256);
        Session {
            id,
            mode,
            shared: Mutex::new(Shared {
                log: Vec::new(),
                status: Status::Running,
                pending_question: None,
                transcript: Vec::new(),
                rules: None,
                progress: Progress::default(),
                error: None,
                last_active: Instant::now(),
            }),
            tx,
            machine: tokio::sync::Mutex::new(machine),
            log_path,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Shared> {
        self.shared.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Appends an event to the log, persists it and pushes it to subscribers.
    fn emit(&self, kind: &str, data: Value) {
        let mut sh = self.lock();
        let event = ServerEvent {
            id: sh.log.len() as u64 + 1,
            kind: kind.to_string(),
            data,
        };
        if let Some(path) = &self.log_path {
            if let Ok(mut f) = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
            {
                let _ = writeln!(f, "{}", serde_json::to_string(&event).unwrap_or_default());
            }
        }
        sh.log.push(event.clone());
        let _ = self.tx.send(event);
    }

    fn ask(&self, question: &str, status: Status) {
        {
            let mut sh = self.lock();
            sh.pending_question = Some(question.to_string());
            sh.status = status;
            sh.last_active = Instant::now();
            sh.transcript.push(TranscriptTurn {
                role: "agent".into(),
                text: question.to_string(),
            });
        }
    }

    fn record_answer(&self, text: &str) {
        let mut sh = self.lock();
        sh.pending_question = None;
        sh.status = Status::Running;
        sh.last_active = Instant::now();
        sh.transcript.push(TranscriptTurn {
            role: "user".into(),
            text: text.to_string(),
        });
    }

    fn fail(&self, e: &Error) {
        {
            let mut sh = self.lock();
            sh.status = Status::Failed;
            sh.error = Some(e.to_string());
            sh.pending_question = None;
        }
        self.emit(
            "run_progress",
            json!({"stage": "failed", "error": e.to_string()}),
        );
    }

    /// Marks a session suspended when its question has waited too long.
    fn check_timeout(&self, timeout: Duration) -> bool {
        let mut sh = self.lock();
        let waiting = matches!(sh.status, Status::AwaitingAnswer | Status::AwaitingFeedback);
        if waiting && sh.last_active.elapsed() >= timeout {
            sh.status = Status::Suspended;
            return true;
        }
        false
    }

    pub fn view(&self) -> SessionView {
        let sh = self.lock();
        SessionView {
            session_id: self.id.clone(),
            mode: self.mode,
            status: sh.status,
            transcript: sh.transcript.clone(),
            pending_question: sh.pending_question.clone(),
            rules: sh.rules.as_ref().map(|r| r.rules().to_vec()),
            rules_version: sh.rules.as_ref().map(|r| r.version),
            progress: sh.progress.clone(),
            error: sh.error.clone(),
        }
    }
}

/// Everything a handler needs: model access, data and the live sessions.
pub struct ServiceState {
    gateway: Gateway,
    templates: Arc<TemplateSet>,
    data: Arc<Data>,
    default_budget: usize,
    adaptive: AdaptiveParams,
    timeout: Duration,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    log_dir: Option<PathBuf>,
    counter: AtomicU64,
    random: RandomState,
}

impl ServiceState {
    pub fn new(
        gateway: Gateway,
        templates: Arc<TemplateSet>,
        data: Data,
        default_budget: usize,
    ) -> Self {
        ServiceState {
            gateway,
            templates,
            data: Arc::new(data),
            default_budget,
            adaptive: AdaptiveParams::default(),
            timeout: ANSWER_TIMEOUT,
            sessions: Mutex::new(HashMap::new()),
            log_dir: None,
            counter: AtomicU64::new(0),
            random: RandomState::new(),
        }
    }

    /// Builds the state from a run config; session logs go under
    /// `<output_dir>/sessions/`.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let gateway = runner::build_gateway(cfg, &cfg.model.model_id)?;
        let templates = runner::load_templates(cfg)?;
        let data = runner::load_data(cfg)?;
        let dir = cfg.output_dir.join("sessions");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut s = Self::new(gateway, templates, data, cfg.elicitation.budget);
        s.log_dir = Some(dir);
        s.adaptive = cfg.adaptive.params();
        Ok(s)
    }

    pub fn with_adaptive(mut self, params: AdaptiveParams) -> Self {
        self.adaptive = params;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn new_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let mut h = self.random.build_hasher();
        h.write_u64(n);
        let a = h.finish();
        h.write_u64(a);
        format!("{:016x}{:016x}", a, h.finish())
    }

    fn session(&self, id: &str) -> std::result::Result<Arc<Session>, ApiError> {
        let s = self
            .sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no session `{id}`")))?;
        if s.check_timeout(self.timeout) {
            // Drop the live elicitation state; the next answer rebuilds it
            // from the event log.
            if let Ok(mut m) = s.machine.try_lock() {
                if let Machine::Elicitation { session, .. } = &mut *m {
                    *session = None;
                }
            }
            s.emit("run_progress", json!({"stage": "suspended"}));
        }
        Ok(s)
    }
}

pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1}))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Precondition(_) | Error::Protocol(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/answers", post(post_answer))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub fn serve(cfg: RunConfig, addr: &str) -> Result<()> {
    let state = Arc::new(ServiceState::from_config(&cfg)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Service(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::Service(format!("bind {addr}: {e}")))?;
        eprintln!("listening on {addr}");
        axum::serve(listener, router(state))
            .await
            .map_err(|e| Error::Service(e.to_string()))
    })
}

enum Step {
    Question(String),
    Rules { rules: RuleSet, paused: bool },
}

fn advance(elicitor: &Elicitor, s: &mut ElicitationSession) -> Result<Step> {
    match elicitor.next_question(s)? {
        NextStep::Question(q) => Ok(Step::Question(q)),
        step => Ok(Step::Rules {
            rules: elicitor.synthesize_rules(s)?,
            paused: step == NextStep::Sufficient,
        }),
    }
}

fn publish_step(session: &Session, step: &Step) {
    match step {
        Step::Question(q) => {
            session.ask(q, Status::AwaitingAnswer);
            session.emit("question", json!({"text": q}));
        }
        Step::Rules { rules, paused } => {
            if *paused {
                session.emit("pause", json!({}));
            }
            {
                let mut sh = session.lock();
                sh.rules = Some(rules.clone());
                sh.status = Status::Synthesized;
                sh.pending_question = None;
            }
            session.emit(
                "rules_synthesized",
                json!({"version": rules.version, "rules": rules.rules()}),
            );
        }
    }
}

#[derive(Serialize)]
struct Reply {
    session_id: String,
    mode: Mode,
    status: Status,
    question: Option<String>,
    rules: Option<Vec<String>>,
}

fn reply(s: &Session) -> Json<Reply> {
    let v = s.view();
    Json(Reply {
        session_id: v.session_id,
        mode: v.mode,
        status: v.status,
        question: v.pending_question,
        rules: v.rules,
    })
}

async fn create_session(
    State(state): State<Arc<ServiceState>>,
    body: Option<Json<CreateSession>>,
) -> ApiResult<impl IntoResponse> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let id = state.new_id();
    let log_path = state
        .log_dir
        .as_ref()
        .map(|d| d.join(format!("{id}.ndjson")));
    let session = match body.mode.unwrap_or(Mode::Elicitation) {
        Mode::Elicitation => {
            let budget = body.budget.unwrap_or(state.default_budget);
            let session = Arc::new(Session::new(
                id.clone(),
                Mode::Elicitation,
                Machine::Elicitation {
                    session: None,
                    events: Vec::new(),
                    budget,
                },
                log_path,
            ));
            let mut machine = session.machine.lock().await;
            let Machine::Elicitation {
                session: slot,
                events,
                ..
            } = &mut *machine
            else {
                unreachable!()
            };
            let elicitor = Elicitor::new(state.gateway.fork(), state.templates.clone());
            let mut es = ElicitationSession::new(state.data.examples(), budget);
            let (es, step) = tokio::task::spawn_blocking(move || {
                let step = advance(&elicitor, &mut es);
                (es, step)
            })
            .await
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            let step = step?;
            *events = es.events().to_vec();
            *slot = Some(es);
            publish_step(&session, &step);
            drop(machine);
            session
        }
        Mode::Adaptive => start_adaptive(&state, id.clone(), body, log_path)?,
    };
    state
        .sessions
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .insert(id, session.clone());
    Ok((StatusCode::CREATED, reply(&session)))
}

async fn get_session(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionView>> {
    Ok(Json(state.session(&id)?.view()))
}

async fn post_answer(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    Json(body): Json<AnswerBody>,
) -> ApiResult<impl IntoResponse> {
    let session = state.session(&id)?;
    let status = session.lock().status;
    let waiting = status == Status::AwaitingAnswer
        || (status == Status::Suspended && session.lock().pending_question.is_some());
    if !waiting {
        return Err(ApiError(
            StatusCode::CONFLICT,
            format!("session is not waiting for an answer ({status:?})"),
        ));
    }
    let mut machine = session.machine.lock().await;
    match &mut *machine {
        Machine::Elicitation {
            session: slot,
            events,
            budget,
        } => {
            let mut es = match slot.take() {
                Some(es) => es,
                None => ElicitationSession::replay(state.data.examples(), *budget, events)?,
            };
            session.record_answer(&body.text);
            session.emit("answer", json!({"text": body.text}));
            let elicitor = Elicitor::new(state.gateway.fork(), state.templates.clone());
            let text = body.text.clone();
            let (es, step) = tokio::task::spawn_blocking(move || {
                let step = elicitor
                    .submit_answer(&mut es, &text)
                    .and_then(|_| advance(&elicitor, &mut es));
                (es, step)
            })
            .await
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            *events = es.events().to_vec();
            *slot = Some(es);
            match step {
                Ok(step) => publish_step(&session, &step),
                Err(e) => {
                    session.fail(&e);
                    return Err(e.into());
                }
            }
        }
        Machine::Adaptive { answers, .. } => {
            session.record_answer(&body.text);
            session.emit("answer", json!({"text": body.text}));
            answers
                .send(body.text)
                .map_err(|_| ApiError(StatusCode::GONE, "adaptive run has ended".into()))?;
        }
    }
    drop(machine);
    Ok(reply(&session))
}

async fn post_feedback(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    Json(body): Json<FeedbackBody>,
) -> ApiResult<impl IntoResponse> {
    let session = state.session(&id)?;
    let machine = session.machine.lock().await;
    let Machine::Adaptive { feedback, .. } = &*machine else {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            "feedback applies to adaptive sessions".into(),
        ));
    };
    if session.lock().status != Status::AwaitingFeedback
        && session.lock().status != Status::Suspended
    {
        return Err(ApiError(
            StatusCode::CONFLICT,
            "no decision awaiting feedback".into(),
        ));
    }
    {
        let mut sh = session.lock();
        sh.status = Status::Running;
        sh.last_active = Instant::now();
    }
    feedback
        .send(body)
        .map_err(|_| ApiError(StatusCode::GONE, "adaptive run has ended".into()))?;
    drop(machine);
    Ok(reply(&session))
}

async fn events(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = std::result::Result<Event, Infallible>>>> {
    let session = state.session(&id)?;
    let after: u64 = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0);
    let (backlog, rx) = {
        let sh = session.lock();
        let backlog: Vec<ServerEvent> = sh.log.iter().filter(|e| e.id > after).cloned().collect();
        (backlog, session.tx.subscribe())
    };
    let to_sse = |e: ServerEvent| {
        Ok(Event::default()
            .id(e.id.to_string())
            .event(e.kind.clone())
            .data(e.data.to_string()))
    };
    let live = BroadcastStream::new(rx).filter_map(|r| async move { r.ok() });
    let stream = stream::iter(backlog).chain(live).map(to_sse);
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

/// Critic questions go out as events; answers come back through the
/// answers endpoint.
struct LiveChannel {
    session: Arc<Session>,
    answers: mpsc::Receiver<String>,
}

impl UserChannel for LiveChannel {
    fn kind(&self) -> ChannelKind {
        ChannelKind::LiveSession
    }

    fn answer(&mut self, question: &str) -> Result<String> {
        self.session.ask(question, Status::AwaitingAnswer);
        self.session
            .emit("critic_question", json!({"text": question}));
        self.answers
            .recv()
            .map_err(|_| Error::Channel("session closed".into()))
    }
}

/// Judges decisions from thumbs-up/down feedback.
///
/// Verification re-runs are scored from what the user already said: the
/// confirmed action stays correct, a rejected one stays wrong, and any other
/// action is counted as wrong because nothing is known about it.
pub struct FeedbackJudge {
    session: Arc<Session>,
    feedback: mpsc::Receiver<FeedbackBody>,
    known: HashMap<String, (Option<usize>, bool)>,
}

impl Judge for FeedbackJudge {
    fn judge(&mut self, scenario: &Scenario, decision: &Decision) -> Result<bool> {
        let action = decision
            .chosen_original_index
            .and_then(|i| scenario.candidate(i))
            .map(|c| c.text.clone());
        {
            let mut sh = self.session.lock();
            sh.status = Status::AwaitingFeedback;
            sh.last_active = Instant::now();
        }
        self.session.emit(
            "run_progress",
            json!({"stage": "awaiting_feedback", "scenario_id": scenario.id, "request": scenario.request, "action": action}),
        );
        loop {
            let fb = self
                .feedback
                .recv()
                .map_err(|_| Error::Channel("session closed".into()))?;
            if fb.scenario_id == scenario.id {
                self.known.insert(
                    scenario.id.clone(),
                    (decision.chosen_original_index, fb.correct),
                );
                return Ok(fb.correct);
            }
        }
    }

    fn rejudge(&mut self, scenario: &Scenario, decision: &Decision) -> Result<bool> {
        Ok(match self.known.get(&scenario.id) {
            Some((chosen, correct)) => *chosen == decision.chosen_original_index && *correct,
            None => false,
        })
    }
}

fn start_adaptive(
    state: &ServiceState,
    id: String,
    body: CreateSession,
    log_path: Option<PathBuf>,
) -> ApiResult<Arc<Session>> {
    let stream: Vec<Scenario> = state.data.test.clone();
    if stream.is_empty() {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            "no test scenarios loaded".into(),
        ));
    }
    if !body.feedback && stream.iter().any(|s| s.preferred.is_none()) {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            "unlabeled scenarios need feedback mode".into(),
        ));
    }
    let initial = if body.rules.is_empty() {
        RuleSet::empty()
    } else {
        RuleSet::new(body.rules, 1, RuleOrigin::External, "user")?
    };
    let (answer_tx, answer_rx) = mpsc::channel();
    let (feedback_tx, feedback_rx) = mpsc::channel();
    let session = Arc::new(Session::new(
        id,
        Mode::Adaptive,
        Machine::Adaptive {
            answers: answer_tx,
            feedback: feedback_tx,
        },
        log_path,
    ));
    session.lock().rules = Some(initial.clone());
    let engine = InferenceEngine::new(state.gateway.fork(), state.templates.clone());
    let worker = session.clone();
    let params = state.adaptive;
    let use_feedback = body.feedback;
    std::thread::spawn(move || {
        let mut channel = LiveChannel {
            session: worker.clone(),
            answers: answer_rx,
        };
        let mut label_judge = LabelJudge;
        let mut feedback_judge = FeedbackJudge {
            session: worker.clone(),
            feedback: feedback_rx,
            known: HashMap::new(),
        };
        let judge: &mut dyn Judge = if use_feedback {
            &mut feedback_judge
        } else {
            &mut label_judge
        };
        let observer_session = worker.clone();
        let mut observe = |e: &AdaptiveEvent| observe_adaptive(&observer_session, e);
        let result = AdaptiveRunner::new(&engine, params, &mut channel, judge)
            .with_observer(&mut observe)
            .run(initial, &stream);
        match result {
            Ok(out) => {
                {
                    let mut sh = worker.lock();
                    sh.status = Status::Finished;
                    sh.rules = Some(out.final_rules.clone());
                }
                worker.emit(
                    "run_progress",
                    json!({"stage": "finished", "accuracy": out.accuracy(), "proposals": out.proposals(), "accepted": out.accepted()}),
                );
            }
            Err(e) => worker.fail(&e),
        }
    });
    Ok(session)
}

fn observe_adaptive(session: &Session, e: &AdaptiveEvent) {
    match e {
        AdaptiveEvent::Batch {
            counter,
            size,
            accuracy,
            rule_version,
        } => {
            {
                let mut sh = session.lock();
                sh.progress.counter = *counter;
                sh.progress.last_batch_accuracy = Some(*accuracy);
            }
            session.emit(
                "run_progress",
                json!({"stage": "batch", "counter": counter, "size": size, "accuracy": accuracy, "rule_version": rule_version}),
            );
        }
        AdaptiveEvent::Gate(g) => {
            session.lock().progress.gate_events += 1;
            session.emit("run_progress", json!({"stage": "gate", "gate": g}));
        }
        AdaptiveEvent::RulesUpdated { version, rules, .. } => {
            if let Ok(r) = RuleSet::new(rules.clone(), *version, RuleOrigin::CriticUpdate, "critic")
            {
                session.lock().rules = Some(r);
            }
            session.emit("rules_updated", json!({"version": version, "rules": rules}));
        }
        AdaptiveEvent::Verification { counter, result } => session.emit(
            "run_progress",
            json!({"stage": "verification", "counter": counter, "result": result}),
        ),
        AdaptiveEvent::CriticExit { counter, exit } => session.emit(
            "run_progress",
            json!({"stage": "critic_exit", "counter": counter, "exit": exit}),
        ),
        AdaptiveEvent::CriticQuestion { .. } | AdaptiveEvent::CriticAnswer { .. } => {}
    }
}
