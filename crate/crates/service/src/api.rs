//! HTTP API consumed by the review UI.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use vaxtract_core::annotation::{AnnotationError, AnnotationStore, Decision};
use vaxtract_core::label::{Engine, ExtractionResult};
use vaxtract_core::llm::{self, ChatClient, Decoding, PROMPT_VERSION, SYSTEM_PROMPT_SHA256};
use vaxtract_core::rules::{self, RuleConfig};
use vaxtract_core::{Dataset, Lexicon, TriageNote, VaccineLabel};

#[derive(Clone)]
pub struct AppState {
    pub lexicon: Arc<Lexicon>,
    pub rules: RuleConfig,
    pub llm: Option<Arc<ChatClient>>,
    pub decoding: Decoding,
    /// Every annotation mutation goes through this one lock.
    pub store: Arc<Mutex<AnnotationStore>>,
    pub api_token: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(r.status(), "bad_request_body", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_query", r.body_text())
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        use AnnotationError::*;
        let (status, code) = match &e {
            UnknownRecord(_) => (StatusCode::NOT_FOUND, "unknown_record"),
            LeaseViolation { .. } => (StatusCode::CONFLICT, "lease_violation"),
            AlreadyLeased(_) => (StatusCode::CONFLICT, "already_leased"),
            NotReviewable(_) => (StatusCode::CONFLICT, "not_reviewable"),
            IdenticalCorrection => (StatusCode::UNPROCESSABLE_ENTITY, "identical_correction"),
            NothingToAccept(_) => (StatusCode::UNPROCESSABLE_ENTITY, "nothing_to_accept"),
            DuplicateRecord(_) => (StatusCode::CONFLICT, "duplicate_record"),
            EmptyReviewer => (StatusCode::BAD_REQUEST, "missing_reviewer"),
            NothingToExport => (StatusCode::CONFLICT, "nothing_to_export"),
            NoDualReviews => (StatusCode::CONFLICT, "no_dual_reviews"),
            CorruptLog { .. } | Io(_) | Json(_) => (StatusCode::INTERNAL_SERVER_ERROR, "store_error"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineChoice {
    Rules,
    Llm,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractRequest {
    #[serde(default)]
    pub id: Option<String>,
    pub age_years: u32,
    pub age_months: u32,
    pub text: String,
    #[serde(default)]
    pub engine: Option<EngineChoice>,
}

impl AppState {
    pub fn default_engine(&self) -> EngineChoice {
        if self.llm.is_some() {
            EngineChoice::Llm
        } else {
            EngineChoice::Rules
        }
    }

    pub async fn extract_note(&self, note: &TriageNote, engine: EngineChoice) -> ApiResult<ExtractionResult> {
        match engine {
            EngineChoice::Rules => Ok(rules::extract(note, &self.lexicon, &self.rules)),
            EngineChoice::Llm => {
                let client = self.llm.as_ref().ok_or_else(|| {
                    ApiError::new(
                        StatusCode::UNPROCESSABLE_ENTITY,
                        "engine_unavailable",
                        "no model endpoint is configured",
                    )
                })?;
                Ok(llm::extract_one(note, client.as_ref(), &self.lexicon, &self.decoding).await)
            }
        }
    }
}

async fn extract(
    State(s): State<AppState>,
    body: Result<Json<ExtractRequest>, JsonRejection>,
) -> ApiResult<Json<ExtractionResult>> {
    let Json(req) = body?;
    if req.age_months >= 12 {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_note",
            "age_months must be below 12",
        ));
    }
    if req.text.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_note",
            "text is empty",
        ));
    }
    let note = TriageNote {
        id: req.id.unwrap_or_else(|| "request".to_string()),
        age_years: req.age_years,
        age_months: req.age_months,
        text: req.text,
        gold: None,
    };
    let engine = req.engine.unwrap_or_else(|| s.default_engine());
    Ok(Json(s.extract_note(&note, engine).await?))
}

#[derive(Debug, Deserialize)]
struct ReviewerQuery {
    #[serde(default)]
    reviewer: String,
}

async fn next_pending(
    State(s): State<AppState>,
    q: Result<Query<ReviewerQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q?;
    let mut store = s.store.lock().await;
    Ok(match store.next_pending(&q.reviewer)? {
        Some(rec) => Json(rec).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DecisionKind {
    Accept,
    Correct,
    Skip,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionRequest {
    reviewer: String,
    decision: DecisionKind,
    /// Label string for corrections: a canonical id, "Unspecified" or "No".
    #[serde(default)]
    label: Option<String>,
}

async fn decide(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<DecisionRequest>, JsonRejection>,
) -> ApiResult<Json<vaxtract_core::annotation::AnnotationRecord>> {
    let Json(req) = body?;
    let decision = match req.decision {
        DecisionKind::Accept => Decision::Accept,
        DecisionKind::Skip => Decision::Skip,
        DecisionKind::Correct => {
            let raw = req.label.as_deref().ok_or_else(|| {
                ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "missing_label",
                    "a correction needs a label",
                )
            })?;
            let label = VaccineLabel::from_label_str(raw, &s.lexicon)
                .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_label", e.to_string()))?;
            Decision::Correct { label }
        }
    };
    let mut store = s.store.lock().await;
    Ok(Json(store.submit_decision(&id, &req.reviewer, decision)?))
}

async fn annotation_stats(State(s): State<AppState>) -> Json<vaxtract_core::annotation::QueueStats> {
    let store = s.store.lock().await;
    Json(store.stats(&s.lexicon))
}

async fn export(State(s): State<AppState>) -> ApiResult<Json<vaxtract_core::annotation::ChatExport>> {
    let store = s.store.lock().await;
    Ok(Json(store.export(s.lexicon.version())?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrelabelRequest {
    dataset: String,
    notes: Vec<TriageNote>,
    #[serde(default)]
    engine: Option<EngineChoice>,
}

#[derive(Debug, Serialize)]
struct PrelabelResponse {
    enqueued: usize,
}

async fn prelabel(
    State(s): State<AppState>,
    body: Result<Json<PrelabelRequest>, JsonRejection>,
) -> ApiResult<Json<PrelabelResponse>> {
    let Json(req) = body?;
    let dataset = Dataset::new(req.dataset, req.notes);
    let engine = req.engine.unwrap_or_else(|| s.default_engine());
    let missing = s.store.lock().await.missing_notes(&dataset);
    // model calls happen outside the store lock
    let results = match engine {
        EngineChoice::Rules => missing
            .into_iter()
            .map(|n| {
                let r = rules::extract(&n, &s.lexicon, &s.rules);
                (n, r)
            })
            .collect::<Vec<_>>(),
        EngineChoice::Llm => {
            let client = s.llm.as_ref().ok_or_else(|| {
                ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "engine_unavailable",
                    "no model endpoint is configured",
                )
            })?;
            let parallel = client.endpoint().max_parallel_requests;
            let preds = llm::extract_batch(&missing, client.as_ref(), &s.lexicon, &s.decoding, parallel).await;
            missing.into_iter().zip(preds.into_iter().map(|p| p.result)).collect()
        }
    };
    let enqueued = s.store.lock().await.enqueue_results(&dataset.name, results)?;
    Ok(Json(PrelabelResponse { enqueued }))
}

#[derive(Debug, Serialize)]
struct LexiconEntryView<'a> {
    canonical_id: &'a str,
    kind: vaxtract_core::lexicon::EntryKind,
    surfaces: &'a [String],
}

async fn lexicon_view(State(s): State<AppState>) -> Json<serde_json::Value> {
    let entries: Vec<_> = s
        .lexicon
        .entries()
        .iter()
        .map(|e| LexiconEntryView {
            canonical_id: &e.canonical_id,
            kind: e.kind,
            surfaces: &e.surfaces,
        })
        .collect();
    let mut labels = vec!["No", "Unspecified"];
    labels.extend(s.lexicon.canonical_ids());
    Json(json!({
        "version": s.lexicon.version(),
        "labels": labels,
        "entries": entries,
    }))
}

async fn healthz(State(s): State<AppState>) -> Json<BTreeMap<&'static str, String>> {
    let engine = match s.default_engine() {
        EngineChoice::Rules => Engine::Rules,
        EngineChoice::Llm => Engine::Llm,
    };
    Json(BTreeMap::from([
        ("status", "ok".to_string()),
        ("lexicon_version", s.lexicon.version().to_string()),
        ("prompt_version", PROMPT_VERSION.to_string()),
        ("system_prompt_sha256", SYSTEM_PROMPT_SHA256.to_string()),
        (
            "default_engine",
            serde_json::to_value(engine)
                .unwrap()
                .as_str()
                .unwrap_or_default()
                .to_string(),
        ),
    ]))
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn require_token(State(s): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.api_token {
        let expected = format!("Bearer {token}");
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v == expected);
        if !ok {
            return ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or wrong bearer token",
            )
            .into_response();
        }
    }
    next.run(req).await
}

/// Rewrites any non-JSON error body (e.g. 405 from the router) into `{code, message}`.
async fn json_errors(req: Request, next: Next) -> Response {
    let is_api = req.uri().path().starts_with("/api") || req.uri().path() == "/healthz";
    let resp = next.run(req).await;
    let status = resp.status();
    let is_json = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .is_some_and(|v| v.as_bytes().starts_with(b"application/json"));
    if !is_api || is_json || !(status.is_client_error() || status.is_server_error()) {
        return resp;
    }
    let bytes = axum::body::to_bytes(resp.into_body(), 64 * 1024)
        .await
        .unwrap_or_default();
    let message = String::from_utf8_lossy(&bytes).trim().to_string();
    let code = status
        .canonical_reason()
        .unwrap_or("error")
        .to_lowercase()
        .replace(' ', "_");
    let mut out = (status, Json(json!({"code": code, "message": message}))).into_response();
    out.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    out
}

pub fn router(state: AppState, ui_assets: Option<&std::path::Path>) -> Router {
    let api = Router::new()
        .route("/extract", post(extract))
        .route("/prelabel", post(prelabel))
        .route("/annotations/next", get(next_pending))
        .route("/annotations/{id}/decision", post(decide))
        .route("/annotations/stats", get(annotation_stats))
        .route("/export", get(export))
        .route("/lexicon", get(lexicon_view))
        .fallback(api_not_found)
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let app = Router::new()
        .route("/healthz", get(healthz))
        .nest("/api", api)
        .with_state(state);
    let app = match ui_assets {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.fallback(|| async { (StatusCode::NOT_FOUND, Body::from("not found")) }),
    };
    app.layer(middleware::from_fn(json_errors))
}
