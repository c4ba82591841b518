//! HTTP review API over pipeline runs.
//!
//! Runs are read from `runs_dir/<run_id>/bands.json`; each run's review
//! state is built on first access by replaying its decision log. Reads
//! share a lock, decision writes take it exclusively, so log appends are
//! serialized through one writer.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use icd_chapter::categorizer::{interpret, BandStat, CategorizeError, Class, InterpretationReport};
use icd_chapter::pipeline::{PipelineError, RunDir};
use icd_chapter::review::{
    Ack, DecisionRequest, Page, QueueFilter, ReviewError, ReviewState, ValidatedDoc, Verdict,
};
use icd_chapter::weight::Weight;

/// Header carrying the self-reported coder id when the body omits it.
pub const CODER_HEADER: &str = "x-coder-id";

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NoBandAnalysis(String),
    #[error("{0}")]
    Internal(String),
}

/// Error payload: `{"code": ..., "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn parts(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::NoBandAnalysis(_) => (StatusCode::CONFLICT, "no_band_analysis"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.parts();
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{self}");
        }
        let body = ErrorBody {
            code: code.to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::NotFound(_) => ApiError::NotFound(e.to_string()),
            ReviewError::Validation(_) => ApiError::Validation(e.to_string()),
            ReviewError::BadPage => ApiError::BadRequest(e.to_string()),
            ReviewError::NoBandAnalysis => ApiError::NoBandAnalysis(e.to_string()),
            ReviewError::CorruptLog { .. } | ReviewError::Io(_) => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::UnknownRun(_) => ApiError::NotFound(e.to_string()),
            PipelineError::MissingArtifact { .. } => ApiError::NoBandAnalysis(e.to_string()),
            PipelineError::Review(r) => r.into(),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    /// False until the run's bands stage has been executed.
    pub reviewable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunList {
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandsResponse {
    pub run_id: String,
    pub tau: Weight,
    pub bands: Vec<BandStat>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportResponse {
    pub run_id: String,
    pub docs: Vec<ValidatedDoc>,
}

/// Decision payload. `coder_id` falls back to the `x-coder-id` header.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    doc_id: String,
    verdict: Verdict,
    #[serde(default)]
    final_class: Option<Class>,
    #[serde(default)]
    coder_id: Option<String>,
}

/// Shared service state.
pub struct AppState {
    runs_dir: PathBuf,
    runs: RwLock<BTreeMap<String, Arc<RwLock<ReviewState>>>>,
}

impl AppState {
    pub fn new(runs_dir: impl Into<PathBuf>) -> Self {
        AppState {
            runs_dir: runs_dir.into(),
            runs: RwLock::new(BTreeMap::new()),
        }
    }

    fn review(&self, run_id: &str) -> Result<Arc<RwLock<ReviewState>>, ApiError> {
        if let Some(s) = self.runs.read().expect("lock").get(run_id) {
            return Ok(s.clone());
        }
        let dir = RunDir::open(&self.runs_dir, run_id)?;
        let run = dir.load_bands()?;
        let state = ReviewState::open(run, dir.decision_log())?;
        let mut runs = self.runs.write().expect("lock");
        // another request may have opened it meanwhile; keep the first
        Ok(runs
            .entry(run_id.to_string())
            .or_insert_with(|| Arc::new(RwLock::new(state)))
            .clone())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}/bands", get(bands))
        .route("/runs/{id}/queue", get(queue))
        .route("/runs/{id}/docs/{doc_id}/interpretation", get(interpretation))
        .route("/runs/{id}/decisions", post(decide))
        .route("/runs/{id}/export", get(export))
        .fallback(|| async { ApiError::NotFound("no such route".into()) })
        .with_state(state)
}

async fn list_runs(State(app): State<Arc<AppState>>) -> Result<Json<RunList>, ApiError> {
    let ids = RunDir::list(&app.runs_dir)?;
    let runs = ids
        .into_iter()
        .map(|run_id| {
            let reviewable = RunDir::open(&app.runs_dir, &run_id)
                .map(|d| d.path("bands.json").is_file())
                .unwrap_or(false);
            RunSummary { run_id, reviewable }
        })
        .collect();
    Ok(Json(RunList { runs }))
}

async fn bands(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<BandsResponse>, ApiError> {
    let state = app.review(&id)?;
    let state = state.read().expect("lock");
    Ok(Json(BandsResponse {
        run_id: id,
        tau: state.run().tau,
        bands: state.run().band_stats.clone(),
    }))
}

async fn queue(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    filter: Result<Query<QueueFilter>, QueryRejection>,
) -> Result<Json<Page>, ApiError> {
    let Query(filter) = filter.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let state = app.review(&id)?;
    let page = state.read().expect("lock").list_items(&filter)?;
    Ok(Json(page))
}

async fn interpretation(
    State(app): State<Arc<AppState>>,
    Path((id, doc_id)): Path<(String, String)>,
) -> Result<Json<InterpretationReport>, ApiError> {
    let state = app.review(&id)?;
    let state = state.read().expect("lock");
    interpret(&doc_id, state.run()).map(Json).map_err(|e| match e {
        CategorizeError::NotFound(_) => ApiError::NotFound(e.to_string()),
        other => ApiError::Internal(other.to_string()),
    })
}

async fn decide(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<DecisionBody>, JsonRejection>,
) -> Result<(StatusCode, Json<Ack>), ApiError> {
    let Json(body) = body.map_err(|e| ApiError::Validation(e.body_text()))?;
    let coder_id = body
        .coder_id
        .or_else(|| {
            headers
                .get(CODER_HEADER)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        })
        .ok_or_else(|| ApiError::Validation(format!("coder_id missing from body and {CODER_HEADER} header")))?;
    let req = DecisionRequest {
        doc_id: body.doc_id,
        verdict: body.verdict,
        final_class: body.final_class,
        coder_id,
    };
    let state = app.review(&id)?;
    let timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let ack = state.write().expect("lock").submit(&req, timestamp)?;
    Ok((StatusCode::CREATED, Json(ack)))
}

async fn export(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<ExportResponse>, ApiError> {
    let state = app.review(&id)?;
    let docs = state.read().expect("lock").export_validated();
    Ok(Json(ExportResponse { run_id: id, docs }))
}

/// Serves until ctrl-c.
pub async fn serve(runs_dir: PathBuf, addr: SocketAddr) -> std::io::Result<()> {
    let app = router(Arc::new(AppState::new(runs_dir)));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
