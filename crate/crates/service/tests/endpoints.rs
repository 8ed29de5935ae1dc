use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use http_body_util::BodyExt;
use rewardlab_core::composer::score_episode;
use rewardlab_core::config::LabConfig;
use rewardlab_core::demo;
use rewardlab_core::rollout::{run_episode, PolicyTurnRequest, RolloutOptions, ScriptedPolicy};
use rewardlab_core::search::{search_payload, FaultConfig};
use rewardlab_service::wire::{ScoreRequest, ScoreResponse, TranscriptInput};
use rewardlab_service::{router, ServiceState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_with(lab: LabConfig, faults: FaultConfig) -> Router {
    router(Arc::new(ServiceState::new(
        demo::corpus_index(),
        lab,
        faults,
    )))
}

fn app() -> Router {
    app_with(LabConfig::default(), FaultConfig::none())
}

async fn send(
    app: &Router,
    method: &str,
    path: &str,
    body: Option<String>,
) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

async fn post_json(app: &Router, path: &str, body: &Value) -> (StatusCode, Value) {
    let (s, b) = send(app, "POST", path, Some(body.to_string())).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn exemplar_request() -> ScoreRequest {
    let ep = demo::exemplar_episode();
    ScoreRequest {
        transcript: TranscriptInput::Turns(ep.transcript.messages()),
        truths: ep.truths,
        stage: rewardlab_core::Stage::One,
        tool_log: Some(ep.tool_log),
        config_overrides: None,
    }
}

#[tokio::test]
async fn health_reports_corpus_and_is_stable() {
    let a = app();
    let (s1, b1) = send(&a, "GET", "/v1/health", None).await;
    let (_, b2) = send(&a, "GET", "/v1/health", None).await;
    assert_eq!(s1, StatusCode::OK);
    assert_eq!(b1, b2);
    let h: Value = serde_json::from_slice(&b1).unwrap();
    assert_eq!(h["corpus_doc_count"], 20);
    assert_eq!(h["status"], "ok");

    let tweaked = LabConfig::from_toml_str("[composer.weights]\nw_vs = 1.0").unwrap();
    let (_, b3) = send(
        &app_with(tweaked, FaultConfig::none()),
        "GET",
        "/v1/health",
        None,
    )
    .await;
    let h3: Value = serde_json::from_slice(&b3).unwrap();
    assert_ne!(h3["config_hash"], h["config_hash"]);
}

#[tokio::test]
async fn score_matches_in_process() {
    let req = exemplar_request();
    let (s, body) = send(
        &app(),
        "POST",
        "/v1/score",
        Some(serde_json::to_string(&req).unwrap()),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let resp: ScoreResponse = serde_json::from_slice(&body).unwrap();
    let local = score_episode(&demo::exemplar_episode(), &LabConfig::default()).unwrap();
    assert_eq!(resp.breakdown, local);
    assert_eq!((resp.breakdown.r_vs * 1e4).round(), 7071.0);
    assert_eq!(resp.config_hash, LabConfig::default().hash());
    assert!(resp.warnings.is_empty());
}

#[tokio::test]
async fn score_infers_tool_log_from_raw_text() {
    let ep = demo::exemplar_episode();
    let raw = rewardlab_core::serialize_transcript(&ep.transcript);
    let (s, v) = post_json(
        &app(),
        "/v1/score",
        &json!({"transcript": raw, "truths": ["Paris"]}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let local = score_episode(&ep, &LabConfig::default()).unwrap();
    let got: ScoreResponse = serde_json::from_value(v).unwrap();
    assert_eq!(got.breakdown, local);
    assert_eq!(
        got.warnings,
        vec!["tool_log inferred from transcript".to_string()]
    );
}

#[tokio::test]
async fn score_errors() {
    let a = app();
    let mut body = serde_json::to_value(exemplar_request()).unwrap();
    body.as_object_mut().unwrap().remove("truths");
    let (s, v) = post_json(&a, "/v1/score", &body).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "MALFORMED_REQUEST");

    let mut body = serde_json::to_value(exemplar_request()).unwrap();
    body["tool_log"] = json!([{"tool_name": "search", "ok": true}]);
    let (s, v) = post_json(&a, "/v1/score", &body).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "TOOL_LOG_MISMATCH");

    let (s, _) = post_json(
        &a,
        "/v1/score",
        &json!({"transcript": "stray <|im_start|>user\nq", "truths": ["x"]}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = post_json(&a, "/v1/score", &json!({"transcript": [], "truths": []})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "EMPTY_TRUTHS");

    let (s, _) = send(&a, "POST", "/v1/score", Some("{not json".into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let mut body = serde_json::to_value(exemplar_request()).unwrap();
    body["stage"] = json!(3);
    let (s, _) = post_json(&a, "/v1/score", &body).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn overrides_change_hash_and_score() {
    let mut body = serde_json::to_value(exemplar_request()).unwrap();
    body["config_overrides"] = json!({"weights": {"w_vs": 0.0}});
    body["stage"] = json!(2);
    let (s, v) = post_json(&app(), "/v1/score", &body).await;
    assert_eq!(s, StatusCode::OK);
    let lab = LabConfig::default()
        .with_composer_overrides(&json!({"weights": {"w_vs": 0.0}}))
        .unwrap();
    assert_eq!(v["config_hash"], lab.hash());
    let local = score_episode(&demo::exemplar_episode(), &lab).unwrap();
    assert_eq!(v["breakdown"]["b"].as_f64().unwrap(), local.b);
    assert_eq!(v["reward"].as_f64().unwrap(), local.r2);
}

#[tokio::test]
async fn batch_alignment_and_limits() {
    let a = app();
    let good = serde_json::to_value(exemplar_request()).unwrap();
    let (s, v) = post_json(
        &a,
        "/v1/score_batch",
        &json!([good, {"transcript": 5}, good]),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let items = v.as_array().unwrap();
    assert_eq!(items.len(), 3);
    assert!(items[0].get("breakdown").is_some());
    assert_eq!(items[1]["error"]["code"], "MALFORMED_REQUEST");
    assert_eq!(items[2], items[0]);

    let big = Value::Array(vec![good.clone(); 1025]);
    let (s, v) = post_json(&a, "/v1/score_batch", &big).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(v["error"]["code"], "BATCH_TOO_LARGE");

    let max = Value::Array(vec![good; 1024]);
    let (s, v) = post_json(&a, "/v1/score_batch", &max).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 1024);
}

#[tokio::test]
async fn tool_endpoints() {
    let a = app();
    let (s, v) = post_json(&a, "/v1/tools/search", &json!({"query": "paris", "k": 3})).await;
    assert_eq!(s, StatusCode::OK);
    let local = search_payload(&demo::corpus_index(), "paris", 3);
    assert_eq!(v, serde_json::to_value(&local).unwrap());
    assert_eq!(v["ok"], true);

    let (s, v) = post_json(&a, "/v1/tools/visit", &json!({"doc_id": "atlantis"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["ok"], false);
    assert!(v["payload"].as_str().unwrap().starts_with("ERROR:"));

    let (s, _) = post_json(&a, "/v1/tools/search", &json!({"k": 3})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let faulty = app_with(
        LabConfig::default(),
        FaultConfig {
            error_probability: 1.0,
            seed: 3,
        },
    );
    let (s, v) = post_json(&faulty, "/v1/tools/visit", &json!({"doc_id": "paris"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["ok"], false);
}

fn run_body(seed: u64) -> Value {
    json!({
        "qa": demo::exemplar_qa(),
        "script": demo::EXEMPLAR_SCRIPT,
        "seed": seed,
    })
}

#[tokio::test(flavor = "multi_thread")]
async fn scripted_episode_matches_in_process() {
    let a = app_with(
        LabConfig::default(),
        FaultConfig {
            error_probability: 0.5,
            seed: 0,
        },
    );
    let (s, first) = send(
        &a,
        "POST",
        "/v1/episodes/run",
        Some(run_body(11).to_string()),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (_, second) = send(
        &a,
        "POST",
        "/v1/episodes/run",
        Some(run_body(11).to_string()),
    )
    .await;
    assert_eq!(first, second);

    let mut p = ScriptedPolicy::new(demo::EXEMPLAR_SCRIPT);
    let faults = FaultConfig {
        error_probability: 0.5,
        seed: 11,
    };
    let local = run_episode(
        &mut p,
        &demo::exemplar_qa(),
        &demo::corpus_index(),
        &faults,
        &RolloutOptions::default(),
    )
    .unwrap();
    assert_eq!(first, serde_json::to_vec(&local).unwrap());

    let (_, clean) = post_json(&app(), "/v1/episodes/run", &run_body(0)).await;
    assert_eq!(clean["termination"], "ANSWERED");
    assert_eq!(clean["breakdown"]["r_correct"], 1.0);
    assert_eq!(clean["breakdown"]["r_xml"], 1.0);
    assert_eq!(clean["breakdown"]["r_vs"], 0.0);
    assert_eq!(clean["breakdown"]["r_tool"], 1.0);
}

#[tokio::test(flavor = "multi_thread")]
async fn episode_request_validation() {
    let a = app();
    let mut both = run_body(0);
    both["policy_url"] = json!("http://127.0.0.1:9/");
    let (s, _) = post_json(&a, "/v1/episodes/run", &both).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, _) = post_json(&a, "/v1/episodes/run", &json!({"qa": demo::exemplar_qa()})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn unreachable_policy_is_502() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let body =
        json!({"qa": demo::exemplar_qa(), "policy_url": format!("http://127.0.0.1:{port}/turn")});
    let (s, v) = post_json(&app(), "/v1/episodes/run", &body).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(v["error"]["code"], "POLICY_UNREACHABLE");
}

#[tokio::test(flavor = "multi_thread")]
async fn remote_policy_drives_episode() {
    async fn turn(Json(req): Json<PolicyTurnRequest>) -> Json<Value> {
        Json(json!({"content": demo::EXEMPLAR_SCRIPT[req.turn]}))
    }
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, Router::new().route("/turn", post(turn)))
            .await
            .unwrap();
    });

    let body = json!({"qa": demo::exemplar_qa(), "policy_url": format!("http://{addr}/turn")});
    let (s, remote) = send(&app(), "POST", "/v1/episodes/run", Some(body.to_string())).await;
    assert_eq!(s, StatusCode::OK);
    let (_, scripted) = send(
        &app(),
        "POST",
        "/v1/episodes/run",
        Some(run_body(0).to_string()),
    )
    .await;
    assert_eq!(remote, scripted);
}
