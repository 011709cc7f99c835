//! HTTP front end for nightfield: scenario storage, map tiles, point readings,
//! footprint ledgers and asynchronous optimization jobs.
//!
//! | Route | Purpose |
//! |---|---|
//! | `POST /scenarios` | store a new scenario (201) |
//! | `GET /scenarios` | list stored ids |
//! | `GET /scenarios/{id}` | scenario JSON, revision in `x-scenario-revision` |
//! | `PUT /scenarios/{id}/sources` | replace lamps given the revision read |
//! | `POST /scenarios/{id}/import?format=csv\|geojson` | append lamps from a file |
//! | `GET /scenarios/{id}/tiles/{z}/{x}/{y}.png` | web-mercator tile |
//! | `GET /scenarios/{id}/value?lat&lon` | intensity, SQM and normalized brightness |
//! | `GET /scenarios/{id}/footprint?area&kernel` | footprint ledger |
//! | `GET /scenarios/{id}/hotspots?threshold` | bright regions |
//! | `POST /scenarios/{id}/optimize` | queue an optimization (202) |
//! | `GET /jobs/{id}` | poll a job |
//!
//! Errors always carry a `{code, message, detail}` JSON body.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::Router;
use nightfield::fieldmap::{self, Scenario};
use nightfield::footprint::{footprint_report, IlluminanceKernel, DEFAULT_FOOTPRINT_CELL_M, DEFAULT_MOUNT_HEIGHT_M};
use nightfield::geo::GeoPoint;
use nightfield::lightmodel::{intensity_to_sqm, normalized_brightness, LightSource};
use nightfield::optimizer::{evaluation_points, OptimizationSpec, OptimizeError};
use nightfield::scenario_io::{import_sources, ImportError, ImportFormat, ImportOptions, ImportReport, ScenarioStore, StoreError, Stored};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub mod error;
pub mod jobs;

pub use error::{ApiError, ErrorBody};
pub use jobs::{Job, JobKind, JobQueue, JobState, DEFAULT_JOB_SLOTS};

/// Response header carrying the scenario revision a body was produced from.
pub const REVISION_HEADER: &str = "x-scenario-revision";

/// Upper bound on request bodies; lamp imports are the large ones.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

/// Command-line and environment configuration of the service.
#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    /// Scenario store directory.
    #[arg(long, env = "NIGHTFIELD_ROOT", default_value = "scenarios")]
    pub root: PathBuf,
    /// Listen address.
    #[arg(long, env = "NIGHTFIELD_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Optimization jobs allowed to run at once; the rest queue in order.
    #[arg(long, env = "NIGHTFIELD_JOBS", default_value_t = DEFAULT_JOB_SLOTS, value_parser = clap::value_parser!(usize))]
    pub jobs: usize,
    /// Log filter, e.g. `info` or `nightfield_service=debug`.
    #[arg(long, env = "NIGHTFIELD_LOG_LEVEL", default_value = "info")]
    pub log_level: String,
}

/// Installs a stderr logger. Later calls are no-ops.
pub fn init_tracing(filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(filter).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

#[derive(Debug, Clone)]
pub struct AppState {
    pub store: Arc<ScenarioStore>,
    pub jobs: Arc<JobQueue>,
}

impl AppState {
    /// Opens the store and starts a job pool with `slots` workers. Must be called inside
    /// a tokio runtime.
    pub fn new(store: ScenarioStore, slots: usize) -> Self {
        Self { store: Arc::new(store), jobs: Arc::new(JobQueue::start(slots)) }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/scenarios", post(create_scenario).get(list_scenarios))
        .route("/scenarios/{id}", get(get_scenario))
        .route("/scenarios/{id}/sources", put(put_sources))
        .route("/scenarios/{id}/import", post(import))
        .route("/scenarios/{id}/tiles/{z}/{x}/{file}", get(tile))
        .route("/scenarios/{id}/value", get(value))
        .route("/scenarios/{id}/footprint", get(footprint))
        .route("/scenarios/{id}/hotspots", get(hotspots))
        .route("/scenarios/{id}/optimize", post(optimize))
        .route("/jobs/{id}", get(get_job))
        .fallback(|| async { ApiError::not_found("no such route") })
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Runs the service until Ctrl-C.
pub async fn serve(args: ServeArgs) -> std::io::Result<()> {
    let store = ScenarioStore::open(&args.root).map_err(|e| match e {
        StoreError::Io(e) => e,
        other => std::io::Error::other(other.to_string()),
    })?;
    let state = AppState::new(store, args.jobs);
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, root = %args.root.display(), jobs = args.jobs, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

type Params = Query<HashMap<String, String>>;

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        ApiError::bad_request(format!("invalid request body: {e}")).with_detail(json!({ "line": e.line(), "column": e.column() }))
    })
}

fn param<T: FromStr>(q: &HashMap<String, String>, name: &str) -> Result<Option<T>, ApiError> {
    match q.get(name) {
        None => Ok(None),
        Some(raw) => raw.trim().parse().map(Some).map_err(|_| ApiError::bad_request(format!("query parameter {name}={raw:?} is not valid"))),
    }
}

fn required<T: FromStr>(q: &HashMap<String, String>, name: &str) -> Result<T, ApiError> {
    param(q, name)?.ok_or_else(|| ApiError::bad_request(format!("missing query parameter {name}")))
}

/// Runs store I/O and rendering off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn load(state: &AppState, id: String) -> Result<Stored, ApiError> {
    let store = state.store.clone();
    blocking(move || Ok(store.load(&id)?)).await
}

fn revision_value(revision: u64) -> HeaderValue {
    HeaderValue::from(revision)
}

fn etag_matches(headers: &HeaderMap, etag: &str) -> bool {
    headers
        .get_all(header::IF_NONE_MATCH)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|t| {
            let t = t.trim();
            t == "*" || t.trim_start_matches("W/") == etag
        })
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("response types serialize")
}

fn json_response(status: StatusCode, body: Vec<u8>, revision: Option<u64>) -> Response {
    let mut res = (status, [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response();
    if let Some(r) = revision {
        res.headers_mut().insert(REVISION_HEADER, revision_value(r));
    }
    res
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub revision: u64,
}

async fn create_scenario(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let scenario: Scenario = parse_body(&body)?;
    let id = scenario.id().to_string();
    let store = state.store.clone();
    let revision = blocking(move || Ok(store.create(&scenario)?)).await?;
    tracing::info!(scenario = %id, "scenario created");
    let mut res = json_response(StatusCode::CREATED, json_bytes(&Created { id: id.clone(), revision }), Some(revision));
    if let Ok(loc) = HeaderValue::from_str(&format!("/scenarios/{id}")) {
        res.headers_mut().insert(header::LOCATION, loc);
    }
    Ok(res)
}

async fn list_scenarios(State(state): State<AppState>) -> Result<Response, ApiError> {
    let store = state.store.clone();
    let ids = blocking(move || Ok(store.list()?)).await?;
    Ok(json_response(StatusCode::OK, json_bytes(&json!({ "scenarios": ids })), None))
}

async fn get_scenario(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    let stored = load(&state, id.clone()).await?;
    let etag = format!("\"{id}-r{}\"", stored.revision);
    if etag_matches(&headers, &etag) {
        return Ok(not_modified(&etag, stored.revision));
    }
    let mut res = json_response(StatusCode::OK, json_bytes(&stored.scenario), Some(stored.revision));
    res.headers_mut().insert(header::ETAG, HeaderValue::from_str(&etag).expect("etag is ascii"));
    Ok(res)
}

fn not_modified(etag: &str, revision: u64) -> Response {
    let mut res = StatusCode::NOT_MODIFIED.into_response();
    res.headers_mut().insert(header::ETAG, HeaderValue::from_str(etag).expect("etag is ascii"));
    res.headers_mut().insert(REVISION_HEADER, revision_value(revision));
    res
}

/// Body of `PUT /scenarios/{id}/sources`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReplaceSources {
    /// Revision the client last read.
    pub revision: u64,
    pub sources: Vec<LightSource>,
}

async fn put_sources(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let req: ReplaceSources = parse_body(&body)?;
    let store = state.store.clone();
    let revision = blocking(move || {
        let current = store.load(&id)?;
        if current.revision != req.revision {
            return Err(StoreError::StaleRevision { id, expected: req.revision, actual: current.revision }.into());
        }
        let mut next = current.scenario;
        next.set_sources(req.sources)?;
        // The store re-checks the revision under its lock.
        Ok(store.save(&next, req.revision)?)
    })
    .await?;
    Ok(json_response(StatusCode::OK, json_bytes(&json!({ "revision": revision })), Some(revision)))
}

enum ImportOutcome {
    Nothing(ImportReport),
    Failed(ApiError),
}

async fn import(State(state): State<AppState>, Path(id): Path<String>, Query(q): Params, body: Bytes) -> Result<Response, ApiError> {
    let raw: String = required(&q, "format")?;
    let format = ImportFormat::from_str(&raw).map_err(ApiError::bad_request)?;
    let default_profile = param::<u8>(&q, "default_profile")?.unwrap_or(ImportOptions::default().default_profile);
    let store = state.store.clone();
    let (report, revision) = blocking(move || {
        let mut report = None;
        let outcome = store.update(&id, |current| {
            let opts = ImportOptions { default_profile, alpha: current.alpha() };
            let check = |s: &LightSource| {
                if current.source(&s.id).is_some() {
                    return Err(format!("id {:?} already in scenario", s.id));
                }
                current.check_source(s).map_err(|e| e.to_string())
            };
            let (added, rep) = import_sources(format, &body, &opts, &check).map_err(|e: ImportError| ImportOutcome::Failed(e.into()))?;
            if added.is_empty() {
                return Err(ImportOutcome::Nothing(rep));
            }
            let mut next = current.clone();
            let mut all = current.sources().to_vec();
            all.extend(added);
            next.set_sources(all).map_err(|e| ImportOutcome::Failed(e.into()))?;
            report = Some(rep);
            Ok(next)
        })?;
        match outcome {
            Ok(stored) => Ok((report.expect("set on success"), stored.revision)),
            Err(ImportOutcome::Nothing(rep)) => Ok((rep, store.load(&id)?.revision)),
            Err(ImportOutcome::Failed(e)) => Err(e),
        }
    })
    .await?;
    Ok(json_response(StatusCode::OK, json_bytes(&report), Some(revision)))
}

async fn tile(State(state): State<AppState>, Path((id, z, x, file)): Path<(String, String, String, String)>, headers: HeaderMap) -> Result<Response, ApiError> {
    let not_tile = || ApiError::not_found(format!("no tile at /tiles/{z}/{x}/{file}"));
    let y = file.strip_suffix(".png").ok_or_else(not_tile)?;
    let (Ok(zv), Ok(xv), Ok(yv)) = (z.parse::<u8>(), x.parse::<u32>(), y.parse::<u32>()) else {
        return Err(not_tile());
    };
    let stored = load(&state, id.clone()).await?;
    let etag = format!("\"{id}-r{}-{zv}-{xv}-{yv}\"", stored.revision);
    if etag_matches(&headers, &etag) {
        return Ok(not_modified(&etag, stored.revision));
    }
    let png = blocking(move || Ok(fieldmap::encode_png_rgba(&fieldmap::render_tile(&stored.scenario, zv, xv, yv)?))).await?;
    let mut res = (StatusCode::OK, [(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-cache")], png).into_response();
    res.headers_mut().insert(header::ETAG, HeaderValue::from_str(&etag).expect("etag is ascii"));
    res.headers_mut().insert(REVISION_HEADER, revision_value(stored.revision));
    Ok(res)
}

/// Body of `GET /scenarios/{id}/value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointValue {
    pub intensity: f64,
    pub sqm: f64,
    pub normalized: f64,
    /// Colormap swatch of the reading, `#rrggbb`.
    pub color: String,
}

async fn value(State(state): State<AppState>, Path(id): Path<String>, Query(q): Params) -> Result<Response, ApiError> {
    let lat: f64 = required(&q, "lat")?;
    let lon: f64 = required(&q, "lon")?;
    let p = GeoPoint::new(lat, lon).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let stored = load(&state, id).await?;
    let scenario = &stored.scenario;
    let intensity = if scenario.sources().is_empty() { 0.0 } else { fieldmap::field_at(scenario, &p)? };
    let i0_max = scenario.i0_max();
    let sqm = intensity_to_sqm(intensity, i0_max).map_err(|e| ApiError::internal(e.to_string()))?;
    let [r, g, b] = fieldmap::color_for(intensity, i0_max);
    let body = PointValue { intensity, sqm, normalized: normalized_brightness(sqm), color: format!("#{r:02x}{g:02x}{b:02x}") };
    Ok(json_response(StatusCode::OK, json_bytes(&body), Some(stored.revision)))
}

fn parse_kernel(q: &HashMap<String, String>) -> Result<IlluminanceKernel, ApiError> {
    let mount: Option<f64> = param(q, "mount_height_m")?;
    let kernel = match q.get("kernel").map(|s| s.trim()) {
        None | Some("attenuation") => {
            if mount.is_some() {
                return Err(ApiError::bad_request("mount_height_m only applies to kernel=inverse_square"));
            }
            IlluminanceKernel::Attenuation
        }
        Some("inverse_square") => IlluminanceKernel::InverseSquare { mount_height_m: mount.unwrap_or(DEFAULT_MOUNT_HEIGHT_M) },
        Some(other) => return Err(ApiError::bad_request(format!("unknown kernel {other:?} (expected attenuation or inverse_square)"))),
    };
    kernel.validate()?;
    Ok(kernel)
}

async fn footprint(State(state): State<AppState>, Path(id): Path<String>, Query(q): Params) -> Result<Response, ApiError> {
    let area: String = required(&q, "area")?;
    let kernel = parse_kernel(&q)?;
    let cell: f64 = param(&q, "cell_size_m")?.unwrap_or(DEFAULT_FOOTPRINT_CELL_M);
    let csv = match q.get("format").map(String::as_str) {
        None | Some("json") => false,
        Some("csv") => true,
        Some(other) => return Err(ApiError::bad_request(format!("unknown format {other:?} (expected json or csv)"))),
    };
    let stored = load(&state, id).await?;
    let revision = stored.revision;
    let report = blocking(move || {
        let polygon = stored
            .scenario
            .area(&area)
            .ok_or_else(|| ApiError::unprocessable("unknown_area", format!("scenario has no protected area {area:?}")))?;
        Ok(footprint_report(&stored.scenario, polygon, &kernel, cell)?)
    })
    .await?;
    if csv {
        let mut res = (StatusCode::OK, [(header::CONTENT_TYPE, "text/csv")], report.to_csv()).into_response();
        res.headers_mut().insert(REVISION_HEADER, revision_value(revision));
        return Ok(res);
    }
    Ok(json_response(StatusCode::OK, json_bytes(&report), Some(revision)))
}

async fn hotspots(State(state): State<AppState>, Path(id): Path<String>, Query(q): Params) -> Result<Response, ApiError> {
    let threshold: f64 = required(&q, "threshold")?;
    if !threshold.is_finite() {
        return Err(ApiError::bad_request("threshold must be finite"));
    }
    let stored = load(&state, id).await?;
    let revision = stored.revision;
    let body = blocking(move || {
        let grid = fieldmap::render_grid(&stored.scenario)?;
        let regions = fieldmap::hotspots(&grid, threshold);
        Ok(json_bytes(&json!({
            "threshold": threshold,
            "cell_size_m": stored.scenario.cell_size_m(),
            "hotspots": regions,
        })))
    })
    .await?;
    Ok(json_response(StatusCode::OK, body, Some(revision)))
}

/// Body of a 202 from `POST /scenarios/{id}/optimize`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Accepted {
    pub job_id: u64,
    pub scenario_id: String,
    pub revision: u64,
}

async fn optimize(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let spec: OptimizationSpec = parse_body(&body)?;
    spec.validate()?;
    let stored = load(&state, id.clone()).await?;
    if stored.scenario.sources().is_empty() {
        return Err(OptimizeError::NoSources.into());
    }
    // Reject unusable targets now instead of failing the job later.
    let scenario = stored.scenario.clone();
    let target = spec.target.clone();
    blocking(move || Ok(evaluation_points(&scenario, &target)?)).await?;
    let job_id = state.jobs.submit(stored.scenario, stored.revision, spec);
    let mut res = json_response(StatusCode::ACCEPTED, json_bytes(&Accepted { job_id, scenario_id: id, revision: stored.revision }), Some(stored.revision));
    res.headers_mut().insert(header::LOCATION, HeaderValue::from_str(&format!("/jobs/{job_id}")).expect("ascii"));
    Ok(res)
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let job = id.parse::<u64>().ok().and_then(|n| state.jobs.get(n)).ok_or_else(|| ApiError::not_found(format!("job {id:?} not found")))?;
    Ok(json_response(StatusCode::OK, json_bytes(&job), None))
}
