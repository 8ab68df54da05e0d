//! HTTP/JSON front of [`AnnotationService`].
//!
//! Handlers do short, bounded file appends, so they run the service calls
//! inline instead of hopping to a blocking pool.

use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use befund_core::annotation::{AnnotationRecord, AnnotationService, AnnotationSubmission, ReportView, SaveError, SaveOutcome};
use befund_core::{AddOutcome, Error, ObservationClass, Polarity};

type Shared = Arc<AnnotationService>;

const PLACEHOLDER_PAGE: &str = "<!doctype html><meta charset=\"utf-8\"><title>befund</title>\
<p>Annotation API is running. Start the server with <code>--ui &lt;dir&gt;</code> to serve the annotation UI.</p>";

pub fn router(service: Shared, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/progress", get(progress))
        .route("/api/reports", get(next_report))
        .route("/api/reports/{id}", get(report))
        .route("/api/reports/{id}/annotation", post(save))
        .route("/api/phrases", post(add_phrase))
        .route("/api/export.csv", get(export_csv))
        .with_state(service);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER_PAGE) })),
    }
}

#[derive(Debug, Serialize)]
struct ApiError {
    error: &'static str,
    message: String,
}

fn error(status: StatusCode, code: &'static str, message: impl Into<String>) -> Response {
    (
        status,
        Json(ApiError {
            error: code,
            message: message.into(),
        }),
    )
        .into_response()
}

fn store_error(e: Error) -> Response {
    match e {
        Error::NoPhraseLists(_) | Error::EmptyPhrase | Error::Invalid(_) | Error::Config(_) => {
            error(StatusCode::BAD_REQUEST, "invalid", e.to_string())
        }
        Error::UnknownReport(id) => error(StatusCode::NOT_FOUND, "unknown_report", id),
        other => {
            log::error!("{other}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string())
        }
    }
}

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

impl AnnotatorQuery {
    fn required(self) -> Result<String, Box<Response>> {
        match self.annotator {
            Some(a) if !a.trim().is_empty() => Ok(a),
            _ => Err(Box::new(error(
                StatusCode::BAD_REQUEST,
                "missing_annotator",
                "query parameter `annotator` is required",
            ))),
        }
    }
}

async fn progress(State(svc): State<Shared>, Query(q): Query<AnnotatorQuery>) -> Response {
    match q.required() {
        Ok(annotator) => Json(svc.progress(&annotator)).into_response(),
        Err(r) => *r,
    }
}

/// A report plus, when an annotator is given, their latest saved record.
#[derive(Debug, Serialize)]
struct ReportResponse {
    #[serde(flatten)]
    view: ReportView,
    annotation: Option<AnnotationRecord>,
}

fn with_annotation(svc: &AnnotationService, view: ReportView, annotator: Option<&str>) -> ReportResponse {
    let annotation = annotator.and_then(|a| svc.store().latest(&view.report_id, a));
    ReportResponse { view, annotation }
}

async fn next_report(State(svc): State<Shared>, Query(q): Query<AnnotatorQuery>) -> Response {
    let annotator = match q.required() {
        Ok(a) => a,
        Err(r) => return *r,
    };
    match svc.next_report(&annotator) {
        Some(view) => Json(with_annotation(&svc, view, Some(&annotator))).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn report(State(svc): State<Shared>, UrlPath(id): UrlPath<String>, Query(q): Query<AnnotatorQuery>) -> Response {
    match svc.report(&id) {
        Some(view) => Json(with_annotation(&svc, view, q.annotator.as_deref())).into_response(),
        None => error(StatusCode::NOT_FOUND, "unknown_report", id),
    }
}

#[derive(Debug, Deserialize)]
struct SaveRequest {
    #[serde(flatten)]
    submission: AnnotationSubmission,
    #[serde(default)]
    confirm: bool,
}

async fn save(State(svc): State<Shared>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let request: SaveRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    match svc.save(&id, request.submission, request.confirm) {
        Ok(outcome @ SaveOutcome::Saved { .. }) => (StatusCode::OK, Json(outcome)).into_response(),
        Ok(outcome @ SaveOutcome::Conflicts { .. }) => (StatusCode::CONFLICT, Json(outcome)).into_response(),
        Err(e @ SaveError::UnknownReport(_)) => error(StatusCode::NOT_FOUND, "unknown_report", e.to_string()),
        Err(e @ SaveError::Stale { .. }) => error(StatusCode::CONFLICT, "stale_revision", e.to_string()),
        Err(e @ SaveError::Skipped { .. }) => error(StatusCode::CONFLICT, "revision_gap", e.to_string()),
        Err(e @ SaveError::NoAnnotator) => error(StatusCode::BAD_REQUEST, "missing_annotator", e.to_string()),
        Err(SaveError::Store(e)) => store_error(e),
    }
}

#[derive(Debug, Deserialize)]
struct PhraseRequest {
    class: ObservationClass,
    polarity: Polarity,
    surface: String,
    annotator_id: String,
}

#[derive(Debug, Serialize)]
struct PhraseResponse {
    outcome: AddOutcome,
}

async fn add_phrase(State(svc): State<Shared>, body: Bytes) -> Response {
    let request: PhraseRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    if request.annotator_id.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "missing_annotator", "annotator_id must not be empty");
    }
    match svc.add_phrase(request.class, request.polarity, &request.surface, &request.annotator_id) {
        Ok(outcome) => Json(PhraseResponse { outcome }).into_response(),
        Err(e) => store_error(e),
    }
}

/// Exports one annotator. Without `annotator` the store must hold exactly
/// one, since annotators are never merged.
async fn export_csv(State(svc): State<Shared>, Query(q): Query<AnnotatorQuery>) -> Response {
    let annotator = match q.annotator {
        Some(a) => a,
        None => {
            let all = svc.store().annotators();
            if all.len() != 1 {
                let names: Vec<_> = all.into_iter().collect();
                return error(
                    StatusCode::BAD_REQUEST,
                    "missing_annotator",
                    format!("choose one annotator: {}", json!(names)),
                );
            }
            all.into_iter().next().expect("one annotator")
        }
    };
    match svc.export_csv(&annotator) {
        Ok(csv) => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response(),
        Err(e) => store_error(e),
    }
}
