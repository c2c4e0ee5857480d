use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use cpbo_core::metrics::recommend;
use cpbo_core::normal;
use cpbo_core::surrogate::Checkpoint;
use cpbo_service::{router, AppState, SessionSpec};

async fn call(app: &Arc<AppState>, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = router(app.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn get(app: &Arc<AppState>, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn post(app: &Arc<AppState>, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

/// Extruder bounds: temperature, water feed, screw speed.
fn extruder(n_init: usize, total: usize, rec: &[usize]) -> Value {
    json!({
        "name": "HMEP trial",
        "dim": 3,
        "axes": [
            {"name": "temperature", "low": 110.0, "high": 160.0, "step": 1.0},
            {"name": "water", "low": 250.0, "high": 450.0, "step": 10.0},
            {"name": "speed", "low": 200.0, "high": 900.0, "step": 50.0}
        ],
        "n_init": n_init,
        "total_iterations": total,
        "recommendation_steps": rec,
        "seed": 5,
        "training": {"iterations": 300},
        "scale_preset": "desk"
    })
}

fn on_grid(native: &Value) {
    let v: Vec<f64> = serde_json::from_value(native.clone()).unwrap();
    let axes = [(110.0, 160.0, 1.0), (250.0, 450.0, 10.0), (200.0, 900.0, 50.0)];
    assert_eq!(v.len(), 3);
    for (x, (lo, hi, step)) in v.iter().zip(axes) {
        assert!(*x >= lo && *x <= hi, "{x} outside [{lo}, {hi}]");
        let k = (x - lo) / step;
        assert!((k - k.round()).abs() < 1e-9, "{x} off the {step} grid");
    }
}

async fn create(app: &Arc<AppState>, spec: Value) -> (String, Value) {
    let (s, v) = post(app, "/sessions", spec).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    (v["id"].as_str().unwrap().to_string(), v)
}

async fn label(app: &Arc<AppState>, id: &str, l: i64) -> Value {
    let (s, v) = post(app, &format!("/sessions/{id}/label"), json!({"label": l})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v
}

async fn next_polled(app: &Arc<AppState>, id: &str) -> Value {
    let (s, v) = call(app, Method::POST, &format!("/sessions/{id}/next"), None).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let poll = v["poll"].as_str().unwrap().to_string();
    for _ in 0..600 {
        let (s, job) = get(app, &poll).await;
        assert_eq!(s, StatusCode::OK);
        match job["status"].as_str().unwrap() {
            "running" => tokio::time::sleep(Duration::from_millis(50)).await,
            "done" => return job["result"].clone(),
            other => panic!("job {other}: {job}"),
        }
    }
    panic!("job did not finish");
}

async fn next_wait(app: &Arc<AppState>, id: &str) -> Value {
    let (s, v) = call(app, Method::POST, &format!("/sessions/{id}/next?wait=true"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v
}

fn open(dir: &Path) -> Arc<AppState> {
    AppState::open(dir).unwrap()
}

#[test]
fn spec_defaults_follow_the_protocol() {
    let s: SessionSpec = serde_json::from_value(json!({"axes": [{"low": 0.0, "high": 1.0}]})).unwrap();
    assert_eq!(s.n_init, 15);
    assert_eq!(s.total_iterations, 30);
    assert_eq!(s.recommendation_steps, vec![24, 29]);
    assert!(s.lengthscale_prior_enabled);
    assert!(s.validate().is_ok());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn initial_design_is_on_grid_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let app = open(tmp.path());
    let (id_a, a) = create(&app, extruder(15, 30, &[24, 29])).await;
    let (id_b, b) = create(&app, extruder(15, 30, &[24, 29])).await;
    assert_ne!(id_a, id_b);
    let design = a["initial_design"].as_array().unwrap();
    assert_eq!(design.len(), 15);
    for p in design {
        on_grid(&p["native"]);
    }
    assert_eq!(a["initial_design"], b["initial_design"]);
    let (s, v) = get(&app, &format!("/sessions/{id_a}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["phase"], "init");
    assert_eq!(v["pending"]["index"], 1);
    assert_eq!(v["pending"]["reference"], 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_operator_session() {
    let tmp = tempfile::tempdir().unwrap();
    let app = open(tmp.path());
    let (id, _) = create(&app, extruder(15, 30, &[16, 29])).await;

    // next is illegal until the initial design is labeled
    let (s, v) = call(&app, Method::POST, &format!("/sessions/{id}/next"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "protocol_violation");

    for i in 0..14 {
        let ack = label(&app, &id, [1, -1, 0][i % 3]).await;
        let expect = if i < 13 { "init" } else { "interactive" };
        assert_eq!(ack["phase"], expect);
    }
    let (_, st) = get(&app, &format!("/sessions/{id}")).await;
    assert_eq!(st["labels"].as_array().unwrap().len(), 14);
    assert_eq!(st["labels"][2]["label"], 0);
    assert!(st["pending"].is_null());

    // a second label without a new recommendation is a protocol error
    let (s, _) = post(&app, &format!("/sessions/{id}/label"), json!({"label": 1})).await;
    assert_eq!(s, StatusCode::CONFLICT);

    // index 15: information-gain point against config 14
    let r15 = next_polled(&app, &id).await;
    assert_eq!(r15["index"], 15);
    on_grid(&r15["config"]);
    assert_eq!(r15["diagnostics"]["kind"], "acquisition");
    assert_eq!(r15["diagnostics"]["reference"], 14);
    assert!(r15["diagnostics"]["gamma_hat"].as_f64().unwrap() >= 0.0);
    assert!(r15["diagnostics"]["posterior_sd"].as_f64().unwrap() >= 0.0);
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/next"), None).await;
    assert_eq!(s, StatusCode::CONFLICT, "next twice without a label");
    label(&app, &id, 1).await;

    // index 16: the posterior-mean maximizer
    let r16 = next_wait(&app, &id).await;
    assert_eq!(r16["index"], 16);
    assert_eq!(r16["diagnostics"]["kind"], "recommendation");
    assert_eq!(r16["diagnostics"]["reference"], 15);
    on_grid(&r16["config"]);
    let (_, rep) = get(&app, &format!("/sessions/{id}/report?checkpoint=1")).await;
    let ck: Checkpoint = serde_json::from_value(rep["checkpoint"].clone()).unwrap();
    let ck = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
    let post = ck.model.posterior().unwrap();
    let spec: SessionSpec = serde_json::from_value(extruder(15, 30, &[16, 29])).unwrap();
    let (native, _) = spec.bounds().snap_unit(&recommend(&post).unwrap());
    assert_eq!(serde_json::to_value(&native).unwrap(), r16["config"]);
    assert_eq!(rep["best_recommendation"]["native"], r16["config"]);
    label(&app, &id, -1).await;

    let r17 = next_polled(&app, &id).await;
    assert_eq!(r17["index"], 17);
    assert_eq!(r17["diagnostics"]["reference"], 16);
    let ack = label(&app, &id, 0).await;
    assert_eq!(ack["phase"], "interactive");

    // slices along every axis
    for axis in 0..3 {
        let (s, sl) = get(&app, &format!("/sessions/{id}/slice?axis={axis}&n=12")).await;
        assert_eq!(s, StatusCode::OK, "{sl}");
        let swept: Vec<usize> = serde_json::from_value(sl["swept_axes"].clone()).unwrap();
        assert_eq!(swept.len(), 2);
        assert!(!swept.contains(&axis));
        let mean: Vec<Vec<f64>> = serde_json::from_value(sl["mean"].clone()).unwrap();
        let pz: Vec<Vec<f64>> = serde_json::from_value(sl["p_zero"].clone()).unwrap();
        assert_eq!((mean.len(), mean[0].len()), (12, 12));
        assert!(mean.iter().flatten().all(|v| v.is_finite()));
        assert!(pz.iter().flatten().all(|p| (0.0..=1.0).contains(p)));
        let g = sl["gamma_hat"].as_f64().unwrap();
        let expect = 2.0 * normal::cdf(g / (2f64.sqrt() * 0.04)) - 1.0;
        let got = sl["maximizer"]["p_zero"].as_f64().unwrap();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    let (_, rep) = get(&app, &format!("/sessions/{id}/report")).await;
    assert_eq!(rep["n_history"], 18);
    assert_eq!(rep["n_labels"], 17);
    assert_eq!(rep["gamma_trajectory"].as_array().unwrap().len(), 3);
    assert!(rep.get("checkpoint").is_none());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn finished_session_counts_and_rejects_more_work() {
    let tmp = tempfile::tempdir().unwrap();
    let app = open(tmp.path());
    let (id, _) = create(&app, extruder(4, 6, &[5])).await;
    for _ in 0..3 {
        label(&app, &id, 1).await;
    }
    next_wait(&app, &id).await;
    label(&app, &id, -1).await;
    let r = next_wait(&app, &id).await;
    assert_eq!(r["diagnostics"]["kind"], "recommendation");
    let ack = label(&app, &id, 1).await;
    assert_eq!(ack["phase"], "finished");
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/next"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = post(&app, &format!("/sessions/{id}/label"), json!({"label": 0})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, rep) = get(&app, &format!("/sessions/{id}/report")).await;
    assert_eq!(rep["phase"], "finished");
    assert_eq!(rep["n_history"], 6);
    assert_eq!(rep["n_labels"], 5);
    assert!(rep["gamma_hat"].as_f64().unwrap() >= 0.0);
    assert!(rep["best_recommendation"]["native"].is_array());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn error_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let app = open(tmp.path());
    let (s, v) = get(&app, "/sessions/missing").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");
    assert!(v["message"].is_string());

    let (s, _) = call(&app, Method::POST, "/sessions", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let mut bad = extruder(15, 30, &[24, 29]);
    bad["axes"][0]["step"] = json!(0.0);
    let (s, v) = post(&app, "/sessions", bad).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "invalid_payload");
    let (s, _) = post(&app, "/sessions", extruder(15, 30, &[30])).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let mut bad = extruder(15, 30, &[24]);
    bad["dim"] = json!(2);
    let (s, _) = post(&app, "/sessions", bad).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (id, _) = create(&app, extruder(3, 5, &[])).await;
    for l in [json!({"label": 2}), json!({"label": "yes"}), json!({}), json!({"label": 0.5})] {
        let (s, _) = post(&app, &format!("/sessions/{id}/label"), l).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    }
    let (s, _) = get(&app, &format!("/sessions/{id}/slice?axis=0")).await;
    assert_eq!(s, StatusCode::CONFLICT, "no model yet");
    label(&app, &id, 1).await;
    label(&app, &id, 1).await;
    next_wait(&app, &id).await;
    for q in ["axis=3", "axis=x", "axis=0&value=500", "", "axis=0&n=1"] {
        let (s, v) = get(&app, &format!("/sessions/{id}/slice?{q}")).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{q}: {v}");
    }
    let (s, _) = get(&app, &format!("/sessions/{id}/jobs/job-9")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = post(&app, "/sessions/missing/label", json!({"label": 1})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn rejected_calls_leave_state_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let app = open(tmp.path());
    let (id, _) = create(&app, extruder(3, 5, &[])).await;
    let (_, before) = get(&app, &format!("/sessions/{id}")).await;
    call(&app, Method::POST, &format!("/sessions/{id}/next"), None).await;
    post(&app, &format!("/sessions/{id}/label"), json!({"label": 7})).await;
    let (_, after) = get(&app, &format!("/sessions/{id}")).await;
    assert_eq!(before, after);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn operator_abort_is_a_flagged_minus() {
    let tmp = tempfile::tempdir().unwrap();
    let app = open(tmp.path());
    let (id, _) = create(&app, extruder(3, 5, &[])).await;
    let (s, ack) = post(
        &app,
        &format!("/sessions/{id}/label"),
        json!({"label": -1, "note": "flawed material", "flawed": true}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["recorded"]["label"], -1);
    assert_eq!(ack["recorded"]["flawed"], true);
    assert_eq!(ack["recorded"]["note"], "flawed material");
}

fn state_without_job(v: &Value) -> Value {
    let mut v = v.clone();
    v.as_object_mut().unwrap().remove("running_job");
    v
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn restart_reproduces_state() {
    let tmp = tempfile::tempdir().unwrap();
    let (id, before, report) = {
        let app = open(tmp.path());
        let (id, _) = create(&app, extruder(3, 8, &[4])).await;
        label(&app, &id, 1).await;
        label(&app, &id, 0).await;
        next_wait(&app, &id).await;
        label(&app, &id, -1).await;
        next_wait(&app, &id).await;
        let (_, st) = get(&app, &format!("/sessions/{id}")).await;
        let (_, rep) = get(&app, &format!("/sessions/{id}/report?checkpoint=1")).await;
        (id, st, rep)
    };
    let app = open(tmp.path());
    let (s, after) = get(&app, &format!("/sessions/{id}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(state_without_job(&before), state_without_job(&after));
    let (_, rep) = get(&app, &format!("/sessions/{id}/report?checkpoint=1")).await;
    assert_eq!(report, rep);
    // and the session carries on
    label(&app, &id, 1).await;
    let (_, st) = get(&app, &format!("/sessions/{id}")).await;
    assert_eq!(st["labels"].as_array().unwrap().len(), 4);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn torn_log_tail_is_dropped() {
    use std::io::Write;
    let tmp = tempfile::tempdir().unwrap();
    let (id, before) = {
        let app = open(tmp.path());
        let (id, _) = create(&app, extruder(4, 6, &[])).await;
        label(&app, &id, 1).await;
        let (_, st) = get(&app, &format!("/sessions/{id}")).await;
        (id, st)
    };
    let log = tmp.path().join("sessions").join(&id).join("events.jsonl");
    let mut f = std::fs::OpenOptions::new().append(true).open(&log).unwrap();
    f.write_all(br#"{"seq":2,"event":{"type":"labeled","prev":1,"cu"#).unwrap();
    drop(f);
    let app = open(tmp.path());
    let (_, after) = get(&app, &format!("/sessions/{id}")).await;
    assert_eq!(state_without_job(&before), state_without_job(&after));
    label(&app, &id, 0).await;
    drop(app);
    let app = open(tmp.path());
    let (_, st) = get(&app, &format!("/sessions/{id}")).await;
    assert_eq!(st["labels"].as_array().unwrap().len(), 2);
    assert_eq!(st["labels"][1]["label"], 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let app = open(tmp.path());
    create(&app, extruder(3, 5, &[])).await;
    create(&app, extruder(3, 5, &[])).await;
    let (s, v) = get(&app, "/sessions").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 2);
}
