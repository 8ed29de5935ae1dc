//! HTTP front end for scoring, the simulated tools and episode rollouts.
//!
//! All bodies are JSON. Tool failures travel as `ok: false` payloads with
//! status 200; request problems use 4xx with an `{"error": {...}}` body.

pub mod policy;
pub mod wire;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rewardlab_core::config::LabConfig;
use rewardlab_core::rollout::{
    run_episode, Policy, PolicyFailureKind, RolloutOptions, ScriptedPolicy, DEFAULT_SYSTEM_PROMPT,
};
use rewardlab_core::search::{dispatch, CorpusIndex, FaultConfig, ToolCall};
use serde::de::DeserializeOwned;
use serde_json::Value;

pub use policy::HttpPolicy;
use wire::{
    score_batch_item, score_request, ErrorBody, ErrorCode, ErrorEnvelope, Health,
    RunEpisodeRequest, ScoreRequest, SearchRequest, VisitRequest, MAX_BATCH,
};

const BODY_LIMIT: usize = 64 * 1024 * 1024;

pub struct ServiceState {
    pub index: CorpusIndex,
    pub lab: LabConfig,
    /// Applies to the tool endpoints and is the default for episode runs.
    pub faults: FaultConfig,
    pub policy_timeout: Duration,
    tool_calls: AtomicU64,
}

impl ServiceState {
    pub fn new(index: CorpusIndex, lab: LabConfig, faults: FaultConfig) -> Self {
        Self {
            index,
            lab,
            faults,
            policy_timeout: Duration::from_secs(60),
            tool_calls: AtomicU64::new(0),
        }
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            corpus_doc_count: self.index.doc_count(),
            config_hash: self.lab.hash(),
        }
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/score", post(score))
        .route("/v1/score_batch", post(score_batch))
        .route("/v1/tools/search", post(tool_search))
        .route("/v1/tools/visit", post(tool_visit))
        .route("/v1/episodes/run", post(run))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

struct ApiError(ErrorBody);

impl From<ErrorBody> for ApiError {
    fn from(e: ErrorBody) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorEnvelope { error: self.0 })).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError(ErrorBody::new(ErrorCode::MalformedRequest, e.to_string())))
}

async fn health(State(state): State<Arc<ServiceState>>) -> Json<Health> {
    Json(state.health())
}

async fn score(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: ScoreRequest = parse_body(&body)?;
    Ok(Json(score_request(&req, &state.lab)?).into_response())
}

async fn score_batch(
    State(state): State<Arc<ServiceState>>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let items: Vec<Value> = parse_body(&body)?;
    if items.len() > MAX_BATCH {
        return Err(ErrorBody::new(
            ErrorCode::BatchTooLarge,
            format!("batch of {} exceeds the limit of {MAX_BATCH}", items.len()),
        )
        .into());
    }
    let out: Vec<_> = items
        .into_iter()
        .map(|v| score_batch_item(v, &state.lab))
        .collect();
    Ok(Json(out).into_response())
}

fn call_tool(state: &ServiceState, call: ToolCall) -> Response {
    let call_index = state.tool_calls.fetch_add(1, Ordering::Relaxed);
    Json(dispatch(&state.index, &call, &state.faults, call_index)).into_response()
}

async fn tool_search(
    State(state): State<Arc<ServiceState>>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: SearchRequest = parse_body(&body)?;
    Ok(call_tool(&state, ToolCall::search(&req.query, req.k)))
}

async fn tool_visit(
    State(state): State<Arc<ServiceState>>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: VisitRequest = parse_body(&body)?;
    Ok(call_tool(&state, ToolCall::visit(&req.doc_id)))
}

async fn run(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: RunEpisodeRequest = parse_body(&body)?;
    let malformed = |m: &str| ApiError(ErrorBody::new(ErrorCode::MalformedRequest, m));
    if req.policy_url.is_some() == req.script.is_some() {
        return Err(malformed(
            "exactly one of policy_url and script is required",
        ));
    }
    if req.qa.answers.is_empty() {
        return Err(ErrorBody::new(ErrorCode::EmptyTruths, "qa.answers must not be empty").into());
    }
    req.limits.validate().map_err(|m| malformed(&m))?;

    let worker = state.clone();
    let result = tokio::task::spawn_blocking(move || {
        let mut policy: Box<dyn Policy> = match (&req.policy_url, req.script) {
            (Some(url), _) => Box::new(
                HttpPolicy::new(url.clone(), worker.policy_timeout)
                    .map_err(|e| ErrorBody::new(ErrorCode::Internal, e.to_string()))?,
            ),
            (None, script) => Box::new(ScriptedPolicy::new(script.unwrap_or_default())),
        };
        let faults = FaultConfig {
            seed: req.seed.unwrap_or(worker.faults.seed),
            ..worker.faults
        };
        let opts = RolloutOptions {
            limits: req.limits,
            stage: req.stage,
            lab: worker.lab,
            system_prompt: req
                .system_prompt
                .unwrap_or_else(|| DEFAULT_SYSTEM_PROMPT.to_string()),
        };
        run_episode(policy.as_mut(), &req.qa, &worker.index, &faults, &opts)
            .map_err(|e| ErrorBody::new(ErrorCode::Internal, e.to_string()))
    })
    .await
    .map_err(|e| ApiError(ErrorBody::new(ErrorCode::Internal, e.to_string())))??;

    if let Some(f) = &result.policy_error {
        if f.kind == PolicyFailureKind::Unreachable {
            return Err(ErrorBody::new(ErrorCode::PolicyUnreachable, f.message.clone()).into());
        }
    }
    Ok(Json(result).into_response())
}
