//! HTTP API over the experiment store, plus asynchronous compute jobs.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/api/experiments` | CSV body → 201 `{ids, experiments}` |
//! | POST | `/api/experiments/from-url` | `{"url": ...}` → as above |
//! | GET | `/api/experiments` | summaries |
//! | GET | `/api/experiments/{id}` | one summary |
//! | GET | `/api/experiments/{id}/grid?clip=auto\|<r>\|off&contours=<n>` | matrix, nulls for masked |
//! | DELETE | `/api/experiments/{id}` | 204, idempotent |
//! | POST | `/api/jobs` | landscape request → 202 job |
//! | GET | `/api/jobs/{id}` | job state and progress |
//!
//! Everything else falls through to the static UI directory. There is no
//! authentication.

mod error;
mod fetch;
pub mod jobs;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use landscape_core::analysis::{clip_radius, contour_levels, ClipSpec};
use landscape_core::pipeline::LandscapeRequest;
use landscape_core::store::ExperimentSummary;
use landscape_core::{parse_csv, ExperimentStore};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;
use tracing::info;

pub use error::{ApiError, ErrorBody};
pub use jobs::{JobQueue, JobState, JobView};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_FETCH_CAP_BYTES: u64 = 256 * 1024 * 1024;
pub const DEFAULT_FETCH_TIMEOUT_SECS: u64 = 30;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Grid-evaluation threads per job.
    pub workers: usize,
    pub fetch_cap_bytes: u64,
    pub fetch_timeout: Duration,
    /// Built web UI bundle; a placeholder page is served when absent.
    pub static_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            fetch_cap_bytes: DEFAULT_FETCH_CAP_BYTES,
            fetch_timeout: Duration::from_secs(DEFAULT_FETCH_TIMEOUT_SECS),
            static_dir: None,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<ExperimentStore>,
    jobs: Arc<JobQueue>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    /// Opens the store (importing loose CSVs in the data dir) and starts the
    /// job executor.
    pub fn open(config: ServiceConfig) -> Result<Self, landscape_core::store::StoreError> {
        let (store, report) = ExperimentStore::open_with_import(&config.data_dir)?;
        if !report.imported.is_empty() {
            info!(count = report.imported.len(), "imported CSV experiments from the data dir");
        }
        for skipped in &report.skipped {
            tracing::warn!(%skipped, "skipped CSV in the data dir");
        }
        let store = Arc::new(store);
        let jobs = JobQueue::start(store.clone(), config.workers);
        Ok(Self {
            store,
            jobs,
            config: Arc::new(config),
        })
    }

    pub fn store(&self) -> &ExperimentStore {
        &self.store
    }
}

pub fn router(state: AppState) -> Router {
    let body_limit = usize::try_from(state.config.fetch_cap_bytes).unwrap_or(usize::MAX);
    let api = Router::new()
        .route("/api/experiments", get(list_experiments).post(upload_csv))
        .route("/api/experiments/from-url", post(upload_from_url))
        .route("/api/experiments/{id}", get(get_experiment).delete(delete_experiment))
        .route("/api/experiments/{id}/grid", get(get_grid))
        .route("/api/jobs", post(submit_job))
        .route("/api/jobs/{id}", get(get_job))
        .layer(DefaultBodyLimit::max(body_limit));
    let api = match &state.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder_index)),
    };
    api.with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    serve_on(bind(addr).await?, state).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

/// Binds with a readable error for the common port-in-use case.
pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            std::io::Error::new(e.kind(), format!("port {} is already in use; pick another with --port", addr.port()))
        } else {
            std::io::Error::new(e.kind(), format!("cannot listen on {addr}: {e}"))
        }
    })
}

async fn placeholder_index() -> Html<&'static str> {
    Html(concat!(
        "<!doctype html><title>landscape</title>",
        "<p>No web UI bundle configured (start with <code>--static-dir</code>). ",
        "The API is available under <a href=\"/api/experiments\">/api/experiments</a>.</p>"
    ))
}

#[derive(Serialize)]
struct Created {
    ids: Vec<String>,
    experiments: Vec<ExperimentSummary>,
}

/// Parses and stores every experiment in `bytes`; all-or-nothing with respect
/// to id conflicts already present in the store.
fn ingest(state: &AppState, bytes: &[u8]) -> Result<Response, ApiError> {
    let experiments = parse_csv(bytes)?;
    if let Some(e) = experiments.iter().find(|e| state.store.contains(&e.id)) {
        return Err(ApiError::conflict(&e.id));
    }
    let mut ids = Vec::with_capacity(experiments.len());
    for e in experiments {
        ids.push(e.id.clone());
        state.store.put(e)?;
    }
    let experiments = ids.iter().map(|id| state.store.summary(id)).collect::<Result<_, _>>()?;
    Ok((StatusCode::CREATED, Json(Created { ids, experiments })).into_response())
}

async fn upload_csv(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    tokio::task::spawn_blocking(move || ingest(&state, &body))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

#[derive(Deserialize)]
struct UrlBody {
    url: String,
}

async fn upload_from_url(
    State(state): State<AppState>,
    req: Result<Json<UrlBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = req.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let bytes = fetch::fetch_capped(&req.url, state.config.fetch_cap_bytes, state.config.fetch_timeout).await?;
    tokio::task::spawn_blocking(move || ingest(&state, &bytes))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn list_experiments(State(state): State<AppState>) -> Json<Vec<ExperimentSummary>> {
    Json(state.store.list())
}

async fn get_experiment(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ExperimentSummary>, ApiError> {
    Ok(Json(state.store.summary(&id)?))
}

async fn delete_experiment(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match state.store.delete(&id) {
        Ok(()) | Err(landscape_core::store::StoreError::NotFound(_)) => Ok(StatusCode::NO_CONTENT),
        Err(e) => Err(e.into()),
    }
}

#[derive(Deserialize)]
struct GridQuery {
    clip: Option<String>,
    contours: Option<String>,
}

#[derive(Serialize)]
struct GridView {
    id: String,
    x_values: Vec<f64>,
    y_values: Vec<f64>,
    /// Row-major, one row per y value; masked and non-finite entries are null.
    losses: Vec<Vec<Option<f64>>>,
    clip_radius: Option<f64>,
    contours: Option<Vec<f64>>,
}

async fn get_grid(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<GridQuery>,
) -> Result<Json<GridView>, ApiError> {
    let clip = match q.clip.as_deref() {
        None | Some("off") => None,
        Some(s) => Some(
            s.parse::<ClipSpec>()
                .map_err(|e| ApiError::bad_request(format!("clip: {e}")))?,
        ),
    };
    let contours = match q.contours.as_deref() {
        None => None,
        Some(s) => match s.parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => return Err(ApiError::bad_request(format!("contours must be a positive integer, got `{s}`"))),
        },
    };
    let experiment = state.store.get(&id)?;
    let mut grid = experiment.grid;
    let mut radius = None;
    if let Some(spec) = clip {
        radius = Some(spec.radius_for(&grid));
        grid = clip_radius(&grid, spec);
    }
    let contours = match contours {
        Some(n) => Some(contour_levels(&grid, n).map_err(|e| ApiError::bad_request(e.to_string()))?),
        None => None,
    };
    let losses = grid
        .rows()
        .map(|row| row.iter().map(|v| v.is_finite().then_some(*v)).collect())
        .collect();
    Ok(Json(GridView {
        id,
        x_values: grid.x_values().to_vec(),
        y_values: grid.y_values().to_vec(),
        losses,
        clip_radius: radius,
        contours,
    }))
}

async fn submit_job(
    State(state): State<AppState>,
    spec: Result<Json<LandscapeRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(mut spec) = spec.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let job_id = state.jobs.next_id();
    if spec.id.is_empty() {
        spec.id = job_id.clone();
    }
    if state.store.contains(&spec.id) {
        return Err(ApiError::conflict(&spec.id));
    }
    // validation builds the dataset, which can take a moment
    let prepared = tokio::task::spawn_blocking(move || spec.prepare())
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let view = state.jobs.submit(job_id, prepared);
    Ok((StatusCode::ACCEPTED, Json(view)).into_response())
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    state
        .jobs
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no job with id `{id}`")))
}
