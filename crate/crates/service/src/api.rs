//! HTTP API. JSON everywhere except `/metrics`; every error body is
//! `{"code": ..., "message": ...}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use ctindex_core::fhir::{serialize_bundle, to_transaction_bundle};
use ctindex_core::ingest::{Lane, SeriesDescriptor};
use ctindex_core::scheduler::{SchedulerError, TaskId};
use ctindex_core::search::{parse_query, Page, SearchError, MAX_PAGE_LIMIT};
use ctindex_core::termmap::MappingEntry;
use serde::{Deserialize, Serialize};

use crate::state::AppState;
use crate::SearchResponse;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_owned(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<SchedulerError> for ApiError {
    fn from(e: SchedulerError) -> Self {
        let (status, code) = match &e {
            SchedulerError::RejectedModality { .. } => (StatusCode::BAD_REQUEST, "rejected_modality"),
            SchedulerError::DuplicateActiveTask { .. } => (StatusCode::CONFLICT, "duplicate_active_task"),
            SchedulerError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::MalformedQuery(m) => ApiError::new(StatusCode::BAD_REQUEST, "malformed_query", m),
            other => ApiError::internal(other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;
type AppRef = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    let body_limit = state.config.body_limit_bytes;
    Router::new()
        .route("/tasks", post(submit_task))
        .route("/tasks/{id}", get(get_task))
        .route("/search", get(search))
        .route("/series/{uid}/annotations", get(series_annotations))
        .route("/series/{uid}/fhir", get(series_fhir))
        .route("/metrics", get(metrics))
        .route("/mapping/coverage", get(mapping_coverage))
        .route("/mapping/entries", get(mapping_entries))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(DefaultBodyLimit::max(body_limit))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): AppRef, req: Request, next: Next) -> Response {
    if let Some(token) = &state.config.auth_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|presented| presented == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskRequest {
    series: SeriesDescriptor,
    /// Defaults to the descriptor's source.
    #[serde(default)]
    lane: Option<Lane>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskAccepted {
    pub task_id: String,
    pub state: String,
    pub lane: Lane,
}

async fn submit_task(State(state): AppRef, body: Result<Bytes, BytesRejection>) -> ApiResult<(StatusCode, Json<TaskAccepted>)> {
    let body = body.map_err(|e| ApiError::new(e.status(), "invalid_body", e.body_text()))?;
    let req: TaskRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))?;
    let now = Utc::now();
    req.series
        .validate(now.date_naive())
        .map_err(|m| ApiError::new(StatusCode::BAD_REQUEST, "invalid_series", m))?;
    let lane = req.lane.unwrap_or(req.series.source);
    let task = state.queue.enqueue(req.series, lane, now)?;
    Ok((
        StatusCode::ACCEPTED,
        Json(TaskAccepted {
            task_id: task.task_id.to_string(),
            state: task.state.to_string(),
            lane,
        }),
    ))
}

async fn get_task(State(state): AppRef, Path(id): Path<String>) -> ApiResult<Response> {
    let task_id: TaskId = id
        .parse()
        .map_err(|m: String| ApiError::new(StatusCode::BAD_REQUEST, "invalid_task_id", m))?;
    let task = state.queue.get(task_id).ok_or(SchedulerError::UnknownTask(task_id))?;
    Ok(Json(task).into_response())
}

#[derive(Debug, Deserialize)]
struct SearchParams {
    q: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn search(State(state): AppRef, params: Result<Query<SearchParams>, QueryRejection>) -> ApiResult<Json<SearchResponse>> {
    let Query(params) = params.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_parameters", e.body_text()))?;
    let text = params
        .q
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing_query", "the q parameter is required"))?;
    let query = parse_query(&text)?;
    let page = Page {
        offset: params.offset.unwrap_or(0),
        limit: params.limit.unwrap_or(Page::default().limit),
    };
    if page.limit > MAX_PAGE_LIMIT {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_parameters",
            format!("limit must be at most {MAX_PAGE_LIMIT}"),
        ));
    }
    let result = state.index.search(&query, page)?;
    Ok(Json(SearchResponse::new(&query, page, result)))
}

async fn series_annotations(State(state): AppRef, Path(uid): Path<String>) -> ApiResult<Response> {
    let result = state
        .store
        .get(&uid)
        .ok_or_else(|| ApiError::not_found(format!("series {uid} is not indexed")))?;
    Ok(Json(result.annotations).into_response())
}

async fn series_fhir(State(state): AppRef, Path(uid): Path<String>) -> ApiResult<Response> {
    let result = state
        .store
        .get(&uid)
        .ok_or_else(|| ApiError::not_found(format!("series {uid} is not indexed")))?;
    let set = result
        .resources(&state.pipeline.config().profiles)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let bundle = to_transaction_bundle(&[set]).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/fhir+json"))],
        serialize_bundle(&bundle),
    )
        .into_response())
}

async fn metrics(State(state): AppRef) -> Response {
    (
        [(header::CONTENT_TYPE, HeaderValue::from_static("text/plain; charset=utf-8"))],
        state.metrics_text(),
    )
        .into_response()
}

async fn mapping_coverage(State(state): AppRef) -> Response {
    Json(state.coverage()).into_response()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MappingEntries {
    pub label_set_id: String,
    pub map_version: String,
    pub entries: Vec<MappingEntry>,
}

async fn mapping_entries(State(state): AppRef) -> Json<MappingEntries> {
    Json(MappingEntries {
        label_set_id: state.mapping.target_label_set_id().to_string(),
        map_version: state.mapping.map_version().to_owned(),
        entries: state.mapping.entries().to_vec(),
    })
}
