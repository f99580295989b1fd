use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use prefrules::config::RunConfig;
use prefrules::critic::AdaptiveParams;
use prefrules::service::{router, ServiceState};

fn config(out: &Path) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/kitchen-heuristic.toml");
    RunConfig::load(&path, &[format!("output_dir={}", out.display())]).unwrap()
}

fn app(out: &Path, timeout: Duration) -> Router {
    let state = ServiceState::from_config(&config(out))
        .unwrap()
        .with_timeout(timeout)
        .with_adaptive(AdaptiveParams {
            batch_size: 5,
            feedback_interval: 5,
            alpha: 1.5,
            verify: true,
        });
    router(Arc::new(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v)
}

/// Reads SSE frames until `n` events arrive or a second passes without one.
async fn read_events(app: &Router, id: &str, last: Option<u64>, n: usize) -> Vec<(u64, String)> {
    let mut req = Request::builder().uri(format!("/sessions/{id}/events"));
    if let Some(l) = last {
        req = req.header("last-event-id", l.to_string());
    }
    let resp = app
        .clone()
        .oneshot(req.body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let mut body = resp.into_body();
    let mut text = String::new();
    let mut out = Vec::new();
    while out.len() < n {
        let Ok(Some(Ok(frame))) = tokio::time::timeout(Duration::from_secs(1), body.frame()).await
        else {
            break;
        };
        if let Ok(data) = frame.into_data() {
            text.push_str(&String::from_utf8_lossy(&data));
        }
        while let Some(end) = text.find("\n\n") {
            let block: String = text.drain(..end + 2).collect();
            let mut id = None;
            let mut kind = String::new();
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = v.trim().parse().ok();
                } else if let Some(v) = line.strip_prefix("event:") {
                    kind = v.trim().to_string();
                }
            }
            if let Some(id) = id {
                out.push((id, kind));
            }
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn elicitation_session_runs_to_rules() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path(), Duration::from_secs(600));
    let (st, v) = call(&app, "POST", "/sessions", Some(json!({"budget": 3}))).await;
    assert_eq!(st, StatusCode::CREATED);
    assert_eq!(v["status"], "awaiting_answer");
    let id = v["session_id"].as_str().unwrap().to_string();
    assert!(v["question"].is_string());

    let mut last = v;
    for _ in 0..3 {
        if last["status"] != "awaiting_answer" {
            break;
        }
        let (st, v) = call(
            &app,
            "POST",
            &format!("/sessions/{id}/answers"),
            Some(json!({"text": "I like my milk cold and my cookware cast iron."})),
        )
        .await;
        assert_eq!(st, StatusCode::OK, "{v}");
        last = v;
    }
    assert_eq!(last["status"], "synthesized");
    assert!(!last["rules"].as_array().unwrap().is_empty());

    let (st, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(view["rules_version"], 1);
    assert!(view["pending_question"].is_null());
    let turns = view["transcript"].as_array().unwrap();
    assert_eq!(turns[0]["role"], "agent");
    assert_eq!(turns[1]["role"], "user");

    // A synthesized session takes no more answers.
    let (st, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/answers"),
        Some(json!({"text": "x"})),
    )
    .await;
    assert_eq!(st, StatusCode::CONFLICT);

    // The session log is persisted next to the runs.
    let log =
        std::fs::read_to_string(tmp.path().join("sessions").join(format!("{id}.ndjson"))).unwrap();
    assert!(log.lines().last().unwrap().contains("rules_synthesized"));
}

#[tokio::test(flavor = "multi_thread")]
async fn event_stream_replays_after_last_event_id() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path(), Duration::from_secs(600));
    let (_, v) = call(&app, "POST", "/sessions", Some(json!({"budget": 2}))).await;
    let id = v["session_id"].as_str().unwrap().to_string();
    call(
        &app,
        "POST",
        &format!("/sessions/{id}/answers"),
        Some(json!({"text": "cold milk"})),
    )
    .await;

    let all = read_events(&app, &id, None, 100).await;
    assert!(all.len() >= 3);
    let ids: Vec<u64> = all.iter().map(|e| e.0).collect();
    assert_eq!(ids, (1..=all.len() as u64).collect::<Vec<_>>());
    assert_eq!(all[0].1, "question");
    assert_eq!(all[1].1, "answer");

    let tail = read_events(&app, &id, Some(2), 100).await;
    assert_eq!(tail, all[2..].to_vec());
}

#[tokio::test(flavor = "multi_thread")]
async fn suspended_session_resumes_from_its_log() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path(), Duration::ZERO);
    let (_, v) = call(&app, "POST", "/sessions", Some(json!({"budget": 2}))).await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let (_, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(view["status"], "suspended");
    assert!(view["pending_question"].is_string());

    let (st, v) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/answers"),
        Some(json!({"text": "cold milk"})),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_ne!(v["status"], "failed");
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_sessions_and_bad_bodies_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path(), Duration::from_secs(600));
    let (st, v) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("nope"));
    let (st, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"mode": "elicitation", "bogus": 1})),
    )
    .await;
    assert!(st.is_client_error());
    let (_, v) = call(&app, "POST", "/sessions", None).await;
    let id = v["session_id"].as_str().unwrap();
    let (st, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/feedback"),
        Some(json!({"scenario_id": "k1", "correct": true})),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

async fn wait_for(app: &Router, id: &str, pred: impl Fn(&Value) -> bool) -> Value {
    for _ in 0..400 {
        let (_, v) = call(app, "GET", &format!("/sessions/{id}"), None).await;
        if pred(&v) {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session {id} never reached the expected state");
}

#[tokio::test(flavor = "multi_thread")]
async fn adaptive_session_asks_the_critic_question_and_finishes() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path(), Duration::from_secs(600));
    let (st, v) = call(&app, "POST", "/sessions", Some(json!({"mode": "adaptive"}))).await;
    assert_eq!(st, StatusCode::CREATED);
    let id = v["session_id"].as_str().unwrap().to_string();
    let mut questions = 0;
    loop {
        let v = wait_for(&app, &id, |v| v["status"] != "running").await;
        match v["status"].as_str().unwrap() {
            "awaiting_answer" => {
                questions += 1;
                let (st, _) = call(
                    &app,
                    "POST",
                    &format!("/sessions/{id}/answers"),
                    Some(json!({"text": "Cold milk, cast iron pans, store brand."})),
                )
                .await;
                assert_eq!(st, StatusCode::OK);
            }
            "finished" => {
                assert!(v["progress"]["counter"].as_u64().unwrap() > 0);
                break;
            }
            other => panic!("unexpected status {other}: {v}"),
        }
    }
    assert!(questions > 0, "the critic never asked anything");
    let events = read_events(&app, &id, None, 10_000).await;
    assert!(events.iter().any(|e| e.1 == "critic_question"));
    assert!(events.iter().any(|e| e.1 == "run_progress"));
}

#[tokio::test(flavor = "multi_thread")]
async fn adaptive_session_in_feedback_mode_waits_for_thumbs() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path(), Duration::from_secs(600));
    let (_, v) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"mode": "adaptive", "feedback": true})),
    )
    .await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let v = wait_for(&app, &id, |v| v["status"] == "awaiting_feedback").await;
    assert!(v["pending_question"].is_null());

    // Find which scenario is pending from the event stream.
    let (_, _) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let log =
        std::fs::read_to_string(tmp.path().join("sessions").join(format!("{id}.ndjson"))).unwrap();
    let pending: Value = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .rfind(|e| e["data"]["stage"] == "awaiting_feedback")
        .unwrap();
    let sid = pending["data"]["scenario_id"].as_str().unwrap();
    let (st, v) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/feedback"),
        Some(json!({"scenario_id": sid, "correct": true})),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{v}");
    let v = wait_for(&app, &id, |v| v["status"] == "awaiting_feedback").await;
    assert_eq!(v["progress"]["counter"], 0);
}
