//! Read-model HTTP API over a replayed reliablocks state.
//!
//! Reads go against an immutable `Arc<ChainState>` that can be swapped in
//! whole when the replayer advances. Task creation is the only write and is
//! serialized through the operator world's mutex.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use reliablocks_core::avs::{AvsError, AvsParams, AvsWorld};
use reliablocks_core::scoring::{score_payload, ScorePayload, ScoringError};
use reliablocks_core::{Amount, ChainState, ScoringParams};
use serde::{Deserialize, Serialize};

pub const MAX_RANGE_SPAN: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    BeyondHead,
    BadRequest,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::BeyondHead => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub http_status: u16,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            http_status: code.status().as_u16(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<ScoringError> for ApiError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::BlockBeyondHead { .. } => ApiError::new(ErrorCode::BeyondHead, e.to_string()),
            other => ApiError::new(ErrorCode::Internal, other.to_string()),
        }
    }
}

impl From<AvsError> for ApiError {
    fn from(e: AvsError) -> Self {
        match e {
            AvsError::BlockBeyondHead { .. } => ApiError::new(ErrorCode::BeyondHead, e.to_string()),
            AvsError::UnknownTask(_) => ApiError::new(ErrorCode::NotFound, e.to_string()),
            other => ApiError::new(ErrorCode::Internal, other.to_string()),
        }
    }
}

/// Immutable view of the chain as of some log position.
#[derive(Debug, Clone)]
pub struct ReadModel {
    pub chain: Arc<ChainState>,
    /// Log entries folded into `chain`.
    pub events: u64,
}

pub struct AppState {
    scoring: ScoringParams,
    avs: AvsParams,
    read: RwLock<ReadModel>,
    world: Mutex<AvsWorld>,
}

impl AppState {
    pub fn new(scoring: ScoringParams, avs: AvsParams, chain: ChainState, world: AvsWorld, events: u64) -> Self {
        Self {
            scoring,
            avs,
            read: RwLock::new(ReadModel {
                chain: Arc::new(chain),
                events,
            }),
            world: Mutex::new(world),
        }
    }

    pub fn snapshot(&self) -> ReadModel {
        self.read.read().expect("read model lock poisoned").clone()
    }

    /// Replaces the served chain state in one step.
    pub fn swap(&self, chain: ChainState, events: u64) {
        *self.read.write().expect("read model lock poisoned") = ReadModel {
            chain: Arc::new(chain),
            events,
        };
    }

    pub fn avs_params(&self) -> &AvsParams {
        &self.avs
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/score/{block}", get(score))
        .route("/v1/scores", get(scores))
        .route("/v1/tasks", post(create_task))
        .route("/v1/tasks/{id}", get(task))
        .route("/v1/operators", get(operators))
        .fallback(|| async { ApiError::new(ErrorCode::NotFound, "no such route") })
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    head: u64,
    events: u64,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let view = state.snapshot();
    Json(Health {
        status: "ok",
        head: view.chain.head,
        events: view.events,
    })
}

fn parse_block(raw: &str, what: &str) -> Result<u64, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::bad_request(format!("{what} must be a non-negative integer, got {raw:?}")))
}

async fn score(State(state): State<Arc<AppState>>, Path(raw): Path<String>) -> Result<Json<ScorePayload>, ApiError> {
    let block = parse_block(&raw, "block")?;
    let view = state.snapshot();
    Ok(Json(score_payload(&view.chain, block, &state.scoring)?))
}

async fn scores(
    State(state): State<Arc<AppState>>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Json<Vec<ScorePayload>>, ApiError> {
    let get = |key: &str| {
        query
            .get(key)
            .ok_or_else(|| ApiError::bad_request(format!("missing query parameter {key:?}")))
            .and_then(|v| parse_block(v, key))
    };
    let (from, to) = (get("from")?, get("to")?);
    if from > to {
        return Err(ApiError::bad_request(format!("inverted range {from}..{to}")));
    }
    if to - from > MAX_RANGE_SPAN {
        return Err(ApiError::bad_request(format!(
            "range spans {} blocks; the limit is {MAX_RANGE_SPAN}",
            to - from
        )));
    }
    let view = state.snapshot();
    let blocks = view.chain.query_range(from, to, &state.scoring)?;
    Ok(Json(
        blocks
            .iter()
            .map(|b| ScorePayload::from_block(b, &state.scoring))
            .collect(),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewTask {
    l2_block: u64,
}

async fn create_task(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: NewTask = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("expected {{\"l2_block\": uint}}: {e}")))?;
    let view = state.snapshot();
    let mut world = state.world.lock().expect("world lock poisoned");
    let task = world.create_task(req.l2_block, &view.chain)?.clone();
    Ok((StatusCode::CREATED, Json(task)).into_response())
}

async fn task(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let world = state.world.lock().expect("world lock poisoned");
    let task = world.task(&id).ok_or(AvsError::UnknownTask(id))?;
    Ok(Json(task).into_response())
}

#[derive(Serialize)]
struct OperatorView {
    id: String,
    stake: Amount,
    active: bool,
    slashed_total: Amount,
    rewards_total: Amount,
}

async fn operators(State(state): State<Arc<AppState>>) -> Json<Vec<OperatorView>> {
    let world = state.world.lock().expect("world lock poisoned");
    Json(
        world
            .operators
            .values()
            .map(|o| OperatorView {
                id: o.id.clone(),
                stake: o.stake,
                active: o.active,
                slashed_total: o.slashed_total,
                rewards_total: o.rewards_total,
            })
            .collect(),
    )
}
