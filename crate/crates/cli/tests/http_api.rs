use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use bact_cli::commands::spawn_experiment;
use bact_cli::config::ExperimentConfig;
use bact_cli::server::router;
use bact_core::active_loop::{Quantity, RoundHistory};
use bact_core::annotation::SessionHub;
use bact_core::dataset::{generate_synthetic, Dataset, SyntheticConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => builder.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn assert_error(v: &Value, code: &str) {
    assert_eq!(v["error"], code, "{v}");
    assert!(v["detail"].as_str().is_some_and(|d| !d.is_empty()), "{v}");
}

fn small_config(name: &str, rounds: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        name: name.into(),
        ..Default::default()
    };
    cfg.data.synthetic = SyntheticConfig {
        num_videos: 8,
        num_test_videos: 2,
        mean_frames: 150,
        ..Default::default()
    };
    cfg.active.rounds = rounds;
    cfg.active.budget = Quantity::Count(100);
    cfg.active.init_videos = Quantity::Count(2);
    cfg.active.init_clips = 3;
    cfg.active.query_videos = Quantity::Count(2);
    cfg.active.clips_per_video = 4;
    cfg.active.predictor.epochs = 5;
    cfg
}

type Worker = std::thread::JoinHandle<anyhow::Result<Vec<RoundHistory>>>;

fn start(cfg: &ExperimentConfig) -> (Arc<SessionHub>, Router, Worker, Arc<Dataset>) {
    let ds = Arc::new(generate_synthetic(&cfg.data.synthetic).unwrap());
    let hub = SessionHub::new(ds.class_names().to_vec());
    let worker = spawn_experiment(hub.clone(), ds.clone(), cfg.clone(), None);
    let app = router(hub.clone());
    (hub, app, worker, ds)
}

/// Polls `POST /sessions` until the experiment publishes the given round.
async fn open_session(app: &Router, experiment: &str, round: usize) -> (String, usize) {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let (status, v) = call(
            app,
            "POST",
            "/sessions",
            Some(json!({ "experiment": experiment })),
        )
        .await;
        if status == StatusCode::OK {
            let id = v["session_id"].as_str().unwrap().to_string();
            if id == format!("{experiment}-r{round}") {
                return (id, v["pending"].as_u64().unwrap() as usize);
            }
        } else {
            assert_eq!(status, StatusCode::CONFLICT, "{v}");
            assert_error(&v, "no_outstanding_queries");
        }
        assert!(Instant::now() < deadline, "round {round} never published");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

async fn pending(app: &Router, session: &str) -> Vec<Value> {
    let (status, v) = call(app, "GET", &format!("/sessions/{session}/pending"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v.as_array().unwrap().clone()
}

async fn answer_all(app: &Router, session: &str) -> usize {
    let items = pending(app, session).await;
    for (i, item) in items.iter().enumerate() {
        let (status, v) = call(
            app,
            "POST",
            &format!("/sessions/{session}/labels"),
            Some(json!({ "video": item["video"], "frame": item["frame"], "class": 0 })),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{v}");
        assert_eq!(v["remaining"], items.len() - i - 1);
    }
    items.len()
}

fn has_key(v: &Value, key: &str) -> bool {
    match v {
        Value::Object(m) => m.contains_key(key) || m.values().any(|x| has_key(x, key)),
        Value::Array(a) => a.iter().any(|x| has_key(x, key)),
        _ => false,
    }
}

#[tokio::test]
async fn classes_and_unknown_routes() {
    let hub = SessionHub::new(vec!["pour".into(), "stir".into()]);
    let app = router(hub);
    let (status, v) = call(&app, "GET", "/classes", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({ "class_names": ["pour", "stir"] }));

    let (status, v) = call(&app, "GET", "/sessions/nope/pending", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&v, "unknown_session");

    let (status, v) = call(&app, "GET", "/experiments/nope/history", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&v, "unknown_experiment");

    let (status, v) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({ "experiment": "nope" })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&v, "unknown_experiment");

    let (status, v) = call(&app, "GET", "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&v, "not_found");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_session_resumes_the_round() {
    let cfg = small_config("exp", 1);
    let (_hub, app, worker, ds) = start(&cfg);

    // round 0: initial labels
    let (s0, n0) = open_session(&app, "exp", 0).await;
    assert_eq!(n0, 2 * 3);
    // idempotent
    let (status, v) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({ "experiment": "exp" })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["session_id"], s0.as_str());
    assert_eq!(v["pending"], n0);

    let items = pending(&app, &s0).await;
    let keys: Vec<(String, u64)> = items
        .iter()
        .map(|i| {
            (
                i["video"].as_str().unwrap().to_string(),
                i["frame"].as_u64().unwrap(),
            )
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    for item in &items {
        assert_eq!(item["frame"], item["query"]["center"]);
        assert_eq!(
            item["class_names"].as_array().unwrap().len(),
            ds.num_classes()
        );
    }
    // nothing resembling a ground-truth label is sent
    assert!(!has_key(&Value::Array(items.clone()), "label"));
    assert!(!has_key(&Value::Array(items.clone()), "class"));

    assert_eq!(answer_all(&app, &s0).await, n0);
    let (status, v) = call(
        &app,
        "POST",
        &format!("/sessions/{s0}/labels"),
        Some(json!({ "video": items[0]["video"], "frame": items[0]["frame"], "class": 1 })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&v, "duplicate_label");

    // round 1: the acquisition round
    let (s1, n1) = open_session(&app, "exp", 1).await;
    assert_eq!(n1, 2 * 4);
    assert_eq!(answer_all(&app, &s1).await, n1);
    assert!(pending(&app, &s1).await.is_empty());

    let history = tokio::task::spawn_blocking(move || worker.join().unwrap())
        .await
        .unwrap()
        .unwrap();
    assert_eq!(history.len(), 1);
    assert_eq!(history[0].labeled_before, n0);
    assert_eq!(history[0].labeled_after - history[0].labeled_before, n1);

    let (status, v) = call(&app, "GET", "/experiments/exp/history", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["rounds"][0]["labeled_after"], n0 + n1);
    assert!(!has_key(&v, "label"));

    let (status, v) = call(&app, "POST", "/sessions", Some(json!({}))).await;
    assert_eq!(status, StatusCode::CONFLICT, "single experiment is implied");
    assert_error(&v, "no_outstanding_queries");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn rejected_submissions_leave_state_unchanged() {
    let cfg = small_config("rej", 1);
    let (hub, app, worker, ds) = start(&cfg);
    let (s0, n0) = open_session(&app, "rej", 0).await;
    let items = pending(&app, &s0).await;
    let first = &items[0];
    let url = format!("/sessions/{s0}/labels");

    let (status, _) = call(
        &app,
        "POST",
        &url,
        Some(json!({ "video": first["video"], "frame": first["frame"], "class": 2 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(pending(&app, &s0).await.len(), n0 - 1);

    let cases = [
        (
            json!({ "video": first["video"], "frame": first["frame"], "class": 3 }),
            StatusCode::CONFLICT,
            "duplicate_label",
        ),
        (
            json!({ "video": items[1]["video"], "frame": items[1]["frame"], "class": ds.num_classes() }),
            StatusCode::BAD_REQUEST,
            "invalid_class",
        ),
        (
            json!({ "video": "train_000", "frame": 9999, "class": 0 }),
            StatusCode::NOT_FOUND,
            "unknown_request",
        ),
        (
            json!({ "video": "train_000" }),
            StatusCode::BAD_REQUEST,
            "invalid_body",
        ),
    ];
    for (body, want, code) in cases {
        let (status, v) = call(&app, "POST", &url, Some(body)).await;
        assert_eq!(status, want, "{v}");
        assert_error(&v, code);
        assert_eq!(pending(&app, &s0).await.len(), n0 - 1);
    }
    let (status, v) = call(
        &app,
        "POST",
        "/sessions/rej-r9/labels",
        Some(json!({ "video": "x", "frame": 1, "class": 0 })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&v, "unknown_session");

    // cancel keeps the one answered label and unblocks the loop
    let (status, v) = call(&app, "POST", &format!("/sessions/{s0}/cancel"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["answered"], 1);
    assert!(pending(&app, &s0).await.is_empty());

    let (s1, n1) = open_session(&app, "rej", 1).await;
    assert_eq!(answer_all(&app, &s1).await, n1);
    let history = tokio::task::spawn_blocking(move || worker.join().unwrap())
        .await
        .unwrap()
        .unwrap();
    assert_eq!(history[0].labeled_before, 1);
    assert_eq!(history[0].labeled_after, 1 + n1);
    hub.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn shutdown_stops_a_waiting_experiment() {
    let cfg = small_config("halt", 2);
    let (hub, app, worker, _) = start(&cfg);
    open_session(&app, "halt", 0).await;
    hub.shutdown();
    let res = tokio::task::spawn_blocking(move || worker.join().unwrap())
        .await
        .unwrap();
    assert!(res.is_err());
}
