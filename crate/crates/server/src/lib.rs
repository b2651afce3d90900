//! JSON-over-HTTP access to an [`AnnotationStore`].
//!
//! | method | path | body / answer |
//! |---|---|---|
//! | GET | `/api/samples?status=` | list of [`SampleSummary`] |
//! | GET | `/api/samples/{id}/patch` | [`ContextPatch`] |
//! | POST | `/api/annotations` | [`AnnotationRequest`] → [`StateChange`] |
//! | GET | `/api/review` | list of [`ReviewItem`] |
//! | POST | `/api/consensus` | [`ConsensusRequest`] → [`StateChange`] |
//!
//! Failures answer with `{"code": ..., "message": ...}`.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use lcval_core::annotation::{
    extract_patch, AnnotationError, AnnotationRecord, AnnotationStore, ConfidenceLevel, ContextPatch, WorkflowState,
    DEFAULT_PATCH_METERS,
};
use lcval_core::nomenclature::GeneralClass;
use lcval_core::retrieval::{ExtentPolicy, Product};
use lcval_core::sampling::SamplePoint;

/// Machine-readable error body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status: status.as_u16(), code: code.to_string(), message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        use AnnotationError as E;
        let (status, code) = match &e {
            E::UnknownSample(_) => (StatusCode::NOT_FOUND, "unknown-sample"),
            E::UnknownExpert(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown-expert"),
            E::ReservedExpert(_) => (StatusCode::UNPROCESSABLE_ENTITY, "reserved-expert"),
            E::DuplicateAnnotation { .. } => (StatusCode::CONFLICT, "duplicate-annotation"),
            E::NotReviewable(_) => (StatusCode::CONFLICT, "not-reviewable"),
            E::AlreadyFinalized(_) => (StatusCode::CONFLICT, "already-finalized"),
            E::InvalidRound(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid-round"),
            E::InvalidLevel(_) | E::InvalidPercent(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid-confidence"),
            E::OutOfExtent { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "out-of-extent"),
            E::Unfinalized { .. } => (StatusCode::CONFLICT, "unfinalized"),
            E::BadRoster | E::UnknownProvenance(_) | E::Row { .. } | E::Csv(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub sample_id: u64,
    pub x: f64,
    pub y: f64,
    pub stratum_id: String,
    pub state: WorkflowState,
    pub annotated_by: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub sample_id: u64,
    pub expert_id: String,
    pub label: GeneralClass,
    pub confidence: ConfidenceLevel,
    #[serde(default = "round_one")]
    pub round: u8,
    /// Server time when absent.
    #[serde(default)]
    pub timestamp: Option<u64>,
}

fn round_one() -> u8 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusRequest {
    pub sample_id: u64,
    pub label: GeneralClass,
    pub confidence: ConfidenceLevel,
    #[serde(default)]
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChange {
    pub sample_id: u64,
    pub state: WorkflowState,
}

/// A queued sample with its round-1 records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub sample_id: u64,
    pub records: Vec<AnnotationRecord>,
}

/// Shared server state. Reads take the lock shared; every mutation holds it
/// exclusively, including the log rewrite.
pub struct AppState {
    store: RwLock<AnnotationStore>,
    samples: BTreeMap<u64, SamplePoint>,
    products: Vec<Product>,
    patch_meters: f64,
    policy: ExtentPolicy,
    log_path: Option<PathBuf>,
}

impl AppState {
    pub fn new(store: AnnotationStore, samples: Vec<SamplePoint>, products: Vec<Product>) -> Self {
        Self {
            store: RwLock::new(store),
            samples: samples.into_iter().map(|s| (s.sample_id, s)).collect(),
            products,
            patch_meters: DEFAULT_PATCH_METERS,
            policy: ExtentPolicy::Unclassified,
            log_path: None,
        }
    }

    /// Rewrites the annotation log at `path` after every accepted record.
    pub fn with_log_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.log_path = Some(path.into());
        self
    }

    pub fn with_patch_meters(mut self, meters: f64) -> Self {
        self.patch_meters = meters;
        self
    }

    pub fn with_extent_policy(mut self, policy: ExtentPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Copy of the current store.
    pub fn snapshot(&self) -> AnnotationStore {
        self.store.read().expect("store lock poisoned").clone()
    }

    fn apply(&self, record: AnnotationRecord) -> Result<StateChange, ApiError> {
        let mut store = self.store.write().expect("store lock poisoned");
        let sample_id = record.sample_id;
        let state = store.record_annotation(record)?;
        if let Some(path) = &self.log_path {
            persist(&store, path)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "persistence-failed", e.to_string()))?;
        }
        Ok(StateChange { sample_id, state })
    }
}

fn persist(store: &AnnotationStore, path: &std::path::Path) -> std::io::Result<()> {
    let mut buf = Vec::new();
    store.write_log(&mut buf).map_err(std::io::Error::other)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, buf)?;
    std::fs::rename(tmp, path)
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn parse_id(raw: &str) -> Result<u64, ApiError> {
    raw.parse().map_err(|_| ApiError::bad_request(format!("invalid sample id {raw:?}")))
}

async fn list_samples(
    State(app): State<Arc<AppState>>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<Vec<SampleSummary>>, ApiError> {
    let filter = match params.get("status").map(String::as_str) {
        None | Some("") => None,
        Some(s) => {
            Some(s.parse::<WorkflowState>().map_err(|m| ApiError::new(StatusCode::BAD_REQUEST, "invalid-status", m))?)
        }
    };
    let stratum = params.get("stratum").filter(|s| !s.is_empty());
    let store = app.store.read().expect("store lock poisoned");
    let list = store
        .statuses(filter)
        .into_iter()
        .filter(|s| {
            stratum.is_none_or(|want| app.samples.get(&s.sample_id).is_some_and(|p| p.stratum_id.as_str() == want))
        })
        .map(|s| {
            let point = app.samples.get(&s.sample_id);
            SampleSummary {
                sample_id: s.sample_id,
                x: point.map_or(f64::NAN, |p| p.x),
                y: point.map_or(f64::NAN, |p| p.y),
                stratum_id: point.map_or_else(String::new, |p| p.stratum_id.as_str().to_string()),
                state: s.state,
                annotated_by: s.annotated_by,
            }
        })
        .collect();
    Ok(Json(list))
}

async fn sample_patch(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<ContextPatch>, ApiError> {
    let id = parse_id(&id)?;
    let sample = app.samples.get(&id).ok_or(AnnotationError::UnknownSample(id))?;
    Ok(Json(extract_patch(&app.products, sample, app.patch_meters, app.policy)?))
}

async fn post_annotation(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<StateChange>, ApiError> {
    let req: AnnotationRequest = parse_json(&body)?;
    let record = AnnotationRecord {
        sample_id: req.sample_id,
        expert_id: req.expert_id,
        label: req.label,
        confidence: req.confidence,
        round: req.round,
        timestamp: req.timestamp.unwrap_or_else(now),
    };
    app.apply(record).map(Json)
}

async fn review(State(app): State<Arc<AppState>>) -> Result<Json<Vec<ReviewItem>>, ApiError> {
    let store = app.store.read().expect("store lock poisoned");
    let mut items = Vec::new();
    for sample_id in store.review_queue() {
        let records = store.records(sample_id)?.into_iter().cloned().collect();
        items.push(ReviewItem { sample_id, records });
    }
    Ok(Json(items))
}

async fn post_consensus(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<StateChange>, ApiError> {
    let req: ConsensusRequest = parse_json(&body)?;
    let record = AnnotationRecord {
        sample_id: req.sample_id,
        expert_id: lcval_core::annotation::CONSENSUS_EXPERT.to_string(),
        label: req.label,
        confidence: req.confidence,
        round: 2,
        timestamp: req.timestamp.unwrap_or_else(now),
    };
    app.apply(record).map(Json)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/samples", get(list_samples))
        .route("/api/samples/{id}/patch", get(sample_patch))
        .route("/api/annotations", post(post_annotation))
        .route("/api/review", get(review))
        .route("/api/consensus", post(post_consensus))
        .fallback(not_found)
        .with_state(state)
}

/// Serves until the listener fails or the task is cancelled.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
