//! HTTP surface: thin stateless handlers over the engine command channel.

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use slicer_core::engine::{EngineError, Event, SubmitError};
use slicer_core::model::{parse_job_spec, JobId};
use slicer_core::time::Millis;

use crate::handle::EngineHandle;

#[derive(Clone)]
pub struct AppState {
    pub handle: EngineHandle,
}

/// Error body shared by every endpoint.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                detail: None,
            },
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.body.detail = Some(detail.into());
        self
    }

    fn loop_gone() -> Self {
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "engine_gone",
            "engine loop is not running",
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub fn router(handle: EngineHandle) -> Router {
    Router::new()
        .route("/v1/jobs", post(submit_job))
        .route("/v1/jobs/{id}", get(job_status).delete(cancel_job))
        .route("/v1/jobs/{id}/timeline", get(job_timeline))
        .route("/v1/cluster", get(cluster))
        .route("/v1/events", get(events))
        .route("/v1/clock/advance", post(advance_clock))
        .with_state(AppState { handle })
}

async fn submit_job(State(state): State<AppState>, body: String) -> Result<Response, ApiError> {
    let job = parse_job_spec(&body).map_err(|e| {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed", "body does not parse")
            .with_detail(e.to_string())
    })?;
    let result = state
        .handle
        .submit(job)
        .await
        .map_err(|_| ApiError::loop_gone())?;
    match result {
        Ok(status) => Ok((StatusCode::CREATED, Json(status)).into_response()),
        Err(SubmitError::Infeasible(constraint)) => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "infeasible",
            "job can never run on this cluster",
        )
        .with_detail(constraint)),
        Err(SubmitError::Duplicate(id)) => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "duplicate",
            format!("job id {id} already exists"),
        )),
        Err(SubmitError::Invalid(detail)) => Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "malformed",
            "job violates its invariants",
        )
        .with_detail(detail)),
    }
}

async fn job_status(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let status = state
        .handle
        .status(JobId::new(id.clone()))
        .await
        .map_err(|_| ApiError::loop_gone())?;
    match status {
        Some(status) => Ok(Json(status).into_response()),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_job",
            format!("no job {id}"),
        )),
    }
}

async fn job_timeline(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let result = state
        .handle
        .timeline(JobId::new(id))
        .await
        .map_err(|_| ApiError::loop_gone())?;
    match result {
        Ok(timeline) => Ok(Json(timeline).into_response()),
        Err(EngineError::UnknownJob(id)) => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_job",
            format!("no job {id}"),
        )),
        Err(EngineError::StillActive(id)) => Err(ApiError::new(
            StatusCode::CONFLICT,
            "still_active",
            format!("job {id} has not finished"),
        )),
        Err(other) => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "engine_error",
            other.to_string(),
        )),
    }
}

async fn cancel_job(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let result = state
        .handle
        .cancel(JobId::new(id))
        .await
        .map_err(|_| ApiError::loop_gone())?;
    match result {
        Ok(()) => Ok((StatusCode::ACCEPTED, Json(serde_json::json!({"cancelling": true})))
            .into_response()),
        Err(EngineError::UnknownJob(id)) => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_job",
            format!("no job {id}"),
        )),
        Err(EngineError::AlreadyFinished(id)) => Err(ApiError::new(
            StatusCode::CONFLICT,
            "already_finished",
            format!("job {id} already finished"),
        )),
        Err(other) => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "engine_error",
            other.to_string(),
        )),
    }
}

async fn cluster(State(state): State<AppState>) -> Result<Response, ApiError> {
    let view = state
        .handle
        .cluster()
        .await
        .map_err(|_| ApiError::loop_gone())?;
    Ok(Json(view).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: usize,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    1000
}

#[derive(Debug, Serialize)]
struct EventRecord {
    seq: usize,
    #[serde(flatten)]
    event: Event,
}

#[derive(Debug, Serialize)]
struct EventsPage {
    events: Vec<EventRecord>,
    next_since: usize,
    total: usize,
}

async fn events(
    State(state): State<AppState>,
    Query(query): Query<EventsQuery>,
) -> Result<Response, ApiError> {
    let (events, total) = state
        .handle
        .events(query.since, query.limit)
        .await
        .map_err(|_| ApiError::loop_gone())?;
    let events: Vec<EventRecord> = events
        .into_iter()
        .enumerate()
        .map(|(offset, event)| EventRecord {
            seq: query.since + offset,
            event,
        })
        .collect();
    let next_since = query.since + events.len();
    Ok(Json(EventsPage {
        events,
        next_since,
        total,
    })
    .into_response())
}

#[derive(Debug, Deserialize)]
struct AdvanceBody {
    seconds: f64,
}

async fn advance_clock(
    State(state): State<AppState>,
    body: Result<Json<AdvanceBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(AdvanceBody { seconds }) = body.map_err(|e| {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed", "body does not parse")
            .with_detail(e.to_string())
    })?;
    let delta = Millis::from_secs_f64(seconds).map_err(|e| {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed", e.to_string())
    })?;
    let result = state
        .handle
        .advance(delta)
        .await
        .map_err(|_| ApiError::loop_gone())?;
    match result {
        Ok(now) => Ok(Json(serde_json::json!({ "time_s": now })).into_response()),
        Err(_) => Err(ApiError::new(
            StatusCode::CONFLICT,
            "wrong_mode",
            "clock advance is only available in simulated mode",
        )),
    }
}
