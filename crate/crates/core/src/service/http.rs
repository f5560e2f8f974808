//! HTTP surface of the labeling service.
//!
//! | route                          | result                                   |
//! |--------------------------------|------------------------------------------|
//! | `GET  /api/schema`             | the active codebook document             |
//! | `GET  /api/tasks/next?rater=`  | next task, or 204 when the rater is done |
//! | `POST /api/responses`          | 201 / 409 conflict / 422 violations      |
//! | `GET  /api/progress`           | progress snapshot                        |
//! | `GET  /api/export/responses`   | all current accepted responses           |
//!
//! The rater may also be named with an `X-Rater-Id` header.

use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use super::{Ack, LabelService, Response, ServiceError};

pub const RATER_HEADER: &str = "x-rater-id";

type Shared = Arc<LabelService>;

pub fn router(svc: Shared, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/schema", get(schema))
        .route("/api/tasks/next", get(next_task))
        .route("/api/responses", post(submit))
        .route("/api/progress", get(progress))
        .route("/api/export/responses", get(export))
        .with_state(svc);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the listener fails or the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, svc: Shared, static_dir: Option<&Path>) -> std::io::Result<()> {
    axum::serve(listener, router(svc, static_dir)).await
}

fn error(status: StatusCode, message: impl Into<String>) -> HttpResponse {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn schema(State(svc): State<Shared>) -> HttpResponse {
    ([(header::CONTENT_TYPE, "application/json")], svc.codebook().to_json()).into_response()
}

#[derive(Deserialize)]
struct RaterQuery {
    rater: Option<String>,
}

async fn next_task(State(svc): State<Shared>, Query(q): Query<RaterQuery>, headers: HeaderMap) -> HttpResponse {
    let rater = q.rater.or_else(|| {
        headers
            .get(RATER_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
    });
    let Some(rater) = rater.filter(|r| !r.is_empty()) else {
        return error(
            StatusCode::BAD_REQUEST,
            "missing rater (query `rater` or X-Rater-Id header)",
        );
    };
    match svc.next_task(&rater) {
        Ok(Some(task)) => Json(task).into_response(),
        Ok(None) => StatusCode::NO_CONTENT.into_response(),
        Err(e @ ServiceError::UnknownRater(_)) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn submit(State(svc): State<Shared>, body: Bytes) -> HttpResponse {
    let r: Response = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed response body: {e}")),
    };
    let ack = match tokio::task::spawn_blocking(move || svc.submit(r)).await {
        Ok(Ok(ack)) => ack,
        Ok(Err(e)) => {
            ::log::error!("submit failed: {e}");
            return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
        }
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let status = match &ack {
        Ack::Accepted { .. } => StatusCode::CREATED,
        Ack::Conflict { .. } => StatusCode::CONFLICT,
        Ack::Rejected { .. } => StatusCode::UNPROCESSABLE_ENTITY,
    };
    (status, Json(ack)).into_response()
}

async fn progress(State(svc): State<Shared>) -> HttpResponse {
    Json(svc.progress()).into_response()
}

/// Body of `GET /api/export/responses`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResponseExport {
    pub batch_id: String,
    pub codebook_version: String,
    pub responses: Vec<Response>,
}

async fn export(State(svc): State<Shared>) -> HttpResponse {
    Json(ResponseExport {
        batch_id: svc.batch().batch_id.clone(),
        codebook_version: svc.codebook().version.clone(),
        responses: svc.responses(),
    })
    .into_response()
}
