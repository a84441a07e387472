use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use contesta_core::io::cohort_csv;
use contesta_core::signals::DEFAULT_MAX_LAG_S;
use contesta_core::synth::{generate_cohort, SynthConfig};
use contesta_core::vif::prune_multicollinearity;
use contesta_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &Path) -> Router {
    let config = ServiceConfig {
        data_dir: dir.to_path_buf(),
        ..ServiceConfig::default()
    };
    router(AppState::open(&config).unwrap(), None)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn post(app: &Router, uri: &str, body: String) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

async fn wait_for(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let (status, body) = get(app, &format!("/api/v1/models/{id}/status")).await;
        assert_eq!(status, StatusCode::OK);
        if body["state"] != "running" {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    panic!("training '{id}' did not finish");
}

fn fast_spec() -> Value {
    json!({ "algorithm": "random_forest", "cv_repeats": 1, "cv_folds": 3, "search_draws": 2,
            "hyper_space": { "rf_trees": [30, 60] } })
}

async fn upload_pruned(app: &Router, name: &str, seed: u64) {
    let cohort = generate_cohort(&SynthConfig::with_seed(seed)).unwrap().to_cohort(DEFAULT_MAX_LAG_S).unwrap();
    let (pruned, _) = prune_multicollinearity(&cohort, 2.5).unwrap();
    let features: Vec<&str> = pruned.active_features().iter().map(|f| f.name()).collect();
    let (status, body) = post(app, &format!("/api/v1/cohorts/{name}?features={}", features.join(",")), cohort_csv(&pruned)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["records"], 48);
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_ids_are_404_with_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    for uri in ["/api/v1/models/nope/evaluation", "/api/v1/cases/nope", "/api/v1/cohorts/nope", "/api/v1/models/nope/status"] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(body["error"]["code"], "NotFound");
    }
    let (status, body) = get(&app, "/api/v1/verdicts").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([]));
}

#[tokio::test(flavor = "multi_thread")]
async fn invalid_payloads_are_422() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = post(&app, "/api/v1/cohorts/bad", "a,b\n1,2\n".into()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "InvalidFormat");
    let (status, body) = post(&app, "/api/v1/models", "{not json".into()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "InvalidPayload");
    let (status, body) = post(&app, "/api/v1/models", json!({"name": "../x", "cohort": "c"}).to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "InvalidName");
    upload_pruned(&app, "c", 1).await;
    let req = json!({"name": "m", "cohort": "c", "spec": {"algorithm": "random_forest", "cv_folds": 1}});
    let (status, body) = post(&app, "/api/v1/models", req.to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "InvalidSpec");
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_training_of_one_name_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    upload_pruned(&app, "c", 2).await;
    let req = json!({"name": "slow", "cohort": "c", "algorithm": "random_forest", "seed": 1}).to_string();
    let (status, first) = post(&app, "/api/v1/models", req.clone()).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(first["state"], "running");
    let (status, body) = post(&app, "/api/v1/models", req.clone()).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "TrainingInProgress");
    let other = json!({"name": "other", "cohort": "c", "seed": 1, "spec": fast_spec()}).to_string();
    let (status, _) = post(&app, "/api/v1/models", other).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(wait_for(&app, "other").await["state"], "succeeded");
    assert_eq!(wait_for(&app, "slow").await["state"], "succeeded");
}

#[tokio::test(flavor = "multi_thread")]
async fn full_round_trip_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app1 = app(dir.path());
    upload_pruned(&app1, "cohort", 3).await;
    let req = json!({"name": "rf", "cohort": "cohort", "seed": 5, "spec": fast_spec()}).to_string();
    let (status, _) = post(&app1, "/api/v1/models", req.clone()).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(wait_for(&app1, "rf").await["state"], "succeeded");

    let uris = [
        "/api/v1/models/rf/evaluation",
        "/api/v1/models/rf/importance",
        "/api/v1/models/rf/pdp?feature=sa_hr",
        "/api/v1/models/rf/pdp?feature=sa_hr&static=w&points=5",
        "/api/v1/cases",
        "/api/v1/models",
    ];
    let mut first = Vec::new();
    for uri in uris {
        let (status, body) = get(&app1, uri).await;
        assert_eq!(status, StatusCode::OK, "{uri}: {body}");
        let (_, again) = get(&app1, uri).await;
        assert_eq!(body, again, "{uri} not idempotent");
        first.push(body);
    }
    assert_eq!(first[2]["grid"].as_array().unwrap().len(), 51);
    assert_eq!(first[3]["pd"].as_array().unwrap().len(), 5);
    assert!(first[0]["auc"].is_number());
    let cases = first[4].as_array().unwrap();
    assert_eq!(cases.len(), 48);
    assert_eq!(cases[0]["prediction"]["model"], "rf");

    let (status, body) = get(&app1, "/api/v1/models/rf/pdp?feature=ga").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "StaticFeatureRejected");

    let case = cases[0]["id"].as_str().unwrap().to_string();
    let (status, report) = get(&app1, &format!("/api/v1/models/rf/contest/{case}")).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["k"], 10);
    assert_eq!(report["panels"].as_array().unwrap().len(), 2);
    let (status, what_if) = get(&app1, &format!("/api/v1/models/rf/contest/{case}?k=5&w_gen=0.5")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(what_if["panels"][0]["points"].as_array().unwrap().len(), 5);
    let (status, body) = get(&app1, &format!("/api/v1/models/rf/contest/{case}?k=0")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "InvalidConfig");

    let (status, entry) = post(
        &app1,
        &format!("/api/v1/cases/{case}/verdict"),
        json!({"model": "rf", "verdict": "Contest", "note": "neighbours disagree"}).to_string(),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{entry}");
    assert_eq!(entry["machine_verdict"], report["verdict"]);
    let (status, body) = post(&app1, &format!("/api/v1/cases/{case}/verdict"), json!({"model": "rf", "verdict": "Maybe"}).to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    let app2 = app(dir.path());
    let (_, log) = get(&app2, "/api/v1/verdicts").await;
    assert_eq!(log, json!([entry]));
    for (uri, before) in uris.iter().zip(&first) {
        let (status, body) = get(&app2, uri).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(&body, before, "{uri} changed across restart");
    }
    assert_eq!(get(&app2, "/api/v1/models/rf/status").await.1["state"], "succeeded");

    let (status, _) = post(&app2, "/api/v1/models", req.replace("\"rf\"", "\"rf2\"")).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    wait_for(&app2, "rf2").await;
    let (_, a) = get(&app2, "/api/v1/models/rf/evaluation").await;
    let (_, b) = get(&app2, "/api/v1/models/rf2/evaluation").await;
    assert_eq!(a, b, "identical requests must evaluate identically");
}
