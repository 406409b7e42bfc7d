//! HTTP+JSON front end of the annotation [`SessionHub`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bact_core::annotation::{history_json, AnnotationRequest, SessionHub};
use bact_core::{ClassId, Error};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                detail: detail.into(),
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::InvalidClass { .. } => (StatusCode::BAD_REQUEST, "invalid_class"),
            Error::InvalidInput(_) => (StatusCode::BAD_REQUEST, "invalid_input"),
            Error::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            Error::UnknownExperiment(_) => (StatusCode::NOT_FOUND, "unknown_experiment"),
            Error::UnknownRequest { .. } => (StatusCode::NOT_FOUND, "unknown_request"),
            Error::UnknownVideo(_) => (StatusCode::NOT_FOUND, "unknown_video"),
            Error::DuplicateLabel { .. } => (StatusCode::CONFLICT, "duplicate_label"),
            Error::NoOutstandingQueries => (StatusCode::CONFLICT, "no_outstanding_queries"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CreateSession {
    /// May be omitted when the hub serves a single experiment.
    #[serde(default)]
    pub experiment: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub pending: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitLabel {
    pub video: String,
    pub frame: usize,
    pub class: ClassId,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelAccepted {
    pub remaining: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Cancelled {
    pub answered: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Classes {
    pub class_names: Vec<String>,
}

pub fn router(hub: Arc<SessionHub>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/pending", get(pending))
        .route("/sessions/{id}/labels", post(submit_label))
        .route("/sessions/{id}/cancel", post(cancel))
        .route("/experiments", get(experiments))
        .route("/experiments/{id}/history", get(history))
        .route("/classes", get(classes))
        .fallback(not_found)
        .with_state(hub)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

async fn create_session(
    State(hub): State<Arc<SessionHub>>,
    body: Bytes,
) -> ApiResult<Json<SessionCreated>> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))?
    };
    let experiment = match req.experiment {
        Some(e) => e,
        None => {
            let mut all = hub.experiments();
            if all.len() != 1 {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "invalid_input",
                    format!("`experiment` is required; known: {all:?}"),
                ));
            }
            all.remove(0)
        }
    };
    let session_id = hub.create_session(&experiment)?;
    let pending = hub.get_pending(&session_id)?.len();
    Ok(Json(SessionCreated {
        session_id,
        pending,
    }))
}

async fn pending(
    State(hub): State<Arc<SessionHub>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<AnnotationRequest>>> {
    Ok(Json(hub.get_pending(&id)?))
}

async fn submit_label(
    State(hub): State<Arc<SessionHub>>,
    Path(id): Path<String>,
    body: Result<Json<SubmitLabel>, JsonRejection>,
) -> ApiResult<Json<LabelAccepted>> {
    let Json(b) = body?;
    let remaining = hub.submit_label(&id, &b.video, b.frame, b.class)?;
    Ok(Json(LabelAccepted { remaining }))
}

async fn cancel(
    State(hub): State<Arc<SessionHub>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Cancelled>> {
    Ok(Json(Cancelled {
        answered: hub.cancel(&id)?,
    }))
}

async fn experiments(State(hub): State<Arc<SessionHub>>) -> Json<Vec<String>> {
    Json(hub.experiments())
}

async fn history(
    State(hub): State<Arc<SessionHub>>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let body = history_json(&hub.history(&id)?)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

async fn classes(State(hub): State<Arc<SessionHub>>) -> Json<Classes> {
    Json(Classes {
        class_names: hub.class_names(),
    })
}
