//! REST API: JSON envelopes over the cluster, plus static file serving.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use atmoscope_core::schedule::{ChunkKind, ChunkParams};
use atmoscope_core::time::MS_PER_DAY;
use atmoscope_core::{BBox, CloudCriteria, Comparator, Date, ExperimentId, MatchParams, QueryWindow};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::cluster::supervisor::Supervisor;
use crate::cluster::{ClusterError, FrontEnd};
use crate::matching::match_indexed;
use crate::wire::{matches_to_json, parse_record_array};

/// Largest |A|·|B| a match request may ask for.
pub const MAX_MATCH_PAIRS: u128 = 100_000_000;

#[derive(Clone)]
pub struct AppState {
    pub frontend: FrontEnd,
    pub supervisor: Option<Arc<Supervisor>>,
    pub match_threads: usize,
    pub max_match_pairs: u128,
}

impl AppState {
    pub fn new(frontend: FrontEnd) -> Self {
        AppState {
            frontend,
            supervisor: None,
            match_threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            max_match_pairs: MAX_MATCH_PAIRS,
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }
    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "VALIDATION", message)
    }
    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NOT_FOUND", message)
    }
}

impl From<ClusterError> for ApiError {
    fn from(e: ClusterError) -> Self {
        let status = match e {
            ClusterError::NoWorkers => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        json_response(self.status, body.to_string())
    }
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn round_ms(d: Duration) -> f64 {
    (d.as_secs_f64() * 1e6).round() / 1e3
}

/// `{"data":<data>,"meta":{...}}` with keys in sorted order. `data` must be
/// a canonical JSON array.
fn envelope(data: &str, count: u64, chunks: usize, started: Instant, extra: Option<(&str, Value)>) -> Response {
    let mut meta = serde_json::Map::new();
    meta.insert("chunks".into(), json!(chunks));
    meta.insert("count".into(), json!(count));
    meta.insert("elapsed_ms".into(), json!(round_ms(started.elapsed())));
    if let Some((k, v)) = extra {
        meta.insert(k.into(), v);
    }
    let meta = Value::Object(meta).to_string();
    let mut body = String::with_capacity(data.len() + meta.len() + 20);
    body.push_str("{\"data\":");
    body.push_str(data);
    body.push_str(",\"meta\":");
    body.push_str(&meta);
    body.push('}');
    json_response(StatusCode::OK, body)
}

fn value_envelope(items: Vec<Value>, started: Instant, extra: Option<(&str, Value)>) -> Response {
    let n = items.len() as u64;
    envelope(&Value::Array(items).to_string(), n, 0, started, extra)
}

type Params = Query<HashMap<String, String>>;

fn param<'a>(q: &'a HashMap<String, String>, name: &str) -> Option<&'a str> {
    q.get(name).map(String::as_str)
}

fn parse_day(name: &str, s: &str) -> Result<Date, ApiError> {
    Date::parse(s)
        .ok()
        .filter(|d| d.start().is_some())
        .ok_or_else(|| ApiError::validation(format!("{name}: expected a date YYYY-MM-DD on or after 1970-01-01, got {s:?}")))
}

fn required_day(q: &HashMap<String, String>) -> Result<Date, ApiError> {
    let s = param(q, "day").ok_or_else(|| ApiError::validation("missing query parameter day"))?;
    parse_day("day", s)
}

fn parse_f64(name: &str, s: &str) -> Result<f64, ApiError> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ApiError::validation(format!("{name}: expected a finite number, got {s:?}")))
}

fn parse_bbox(s: &str) -> Result<BBox, ApiError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(ApiError::validation("bbox: expected latmin,latmax,lonmin,lonmax"));
    }
    let v: Vec<f64> = parts.iter().map(|p| parse_f64("bbox", p)).collect::<Result<_, _>>()?;
    BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| ApiError::validation(format!("bbox: {e}")))
}

/// Window covering `first..=last` whole days.
pub fn days_window(first: Date, last: Date, bbox: Option<BBox>) -> QueryWindow {
    let from = first.start().expect("validated date");
    let to = from.saturating_add_ms((last.days_since_epoch() - first.days_since_epoch() + 1).max(0) as u64 * MS_PER_DAY);
    QueryWindow::new(from, to, bbox).expect("ordered bounds")
}

fn known_experiment(st: &AppState, name: &str) -> Result<ExperimentId, ApiError> {
    ExperimentId::new(name)
        .ok()
        .filter(|e| st.frontend.catalog().stats(e).is_some())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UNKNOWN_EXPERIMENT", format!("no experiment {name:?}")))
}

async fn experiments(State(st): State<AppState>) -> Response {
    let started = Instant::now();
    let cat = st.frontend.catalog();
    let items = cat
        .experiments()
        .iter()
        .filter_map(|e| cat.stats(e))
        .map(|s| {
            json!({
                "first_day": s.first_day.to_string(),
                "id": s.experiment.as_str(),
                "last_day": s.last_day.to_string(),
                "record_count": s.record_count,
            })
        })
        .collect();
    value_envelope(items, started, None)
}

async fn days(State(st): State<AppState>, Path(exp): Path<String>, Query(q): Params) -> Result<Response, ApiError> {
    let started = Instant::now();
    let exp = known_experiment(&st, &exp)?;
    let from = param(&q, "from").map(|s| parse_day("from", s)).transpose()?;
    let to = param(&q, "to").map(|s| parse_day("to", s)).transpose()?;
    if let (Some(f), Some(t)) = (from, to) {
        if f > t {
            return Err(ApiError::validation(format!("from ({f}) is after to ({t})")));
        }
    }
    let items = st
        .frontend
        .catalog()
        .list_days(&exp, from, to)
        .into_iter()
        .map(|(d, n)| json!({"count": n, "day": d.to_string()}))
        .collect();
    Ok(value_envelope(items, started, None))
}

async fn run(st: &AppState, exp: &ExperimentId, w: &QueryWindow, kind: ChunkKind, params: ChunkParams) -> Result<Response, ApiError> {
    let started = Instant::now();
    let out = st.frontend.run_task(exp, w, kind, params).await?;
    Ok(envelope(&out.payload, out.count, out.chunks.len(), started, None))
}

async fn records(State(st): State<AppState>, Path(exp): Path<String>, Query(q): Params) -> Result<Response, ApiError> {
    let exp = known_experiment(&st, &exp)?;
    let day = required_day(&q)?;
    let bbox = param(&q, "bbox").map(parse_bbox).transpose()?;
    run(&st, &exp, &days_window(day, day, bbox), ChunkKind::Records, ChunkParams::None).await
}

async fn cloudtop(State(st): State<AppState>, Path(exp): Path<String>, Query(q): Params) -> Result<Response, ApiError> {
    let exp = known_experiment(&st, &exp)?;
    let day = required_day(&q)?;
    let observable = param(&q, "observable").unwrap_or("ci");
    let cmp_s = param(&q, "cmp").unwrap_or("le");
    let cmp = Comparator::parse(cmp_s)
        .ok_or_else(|| ApiError::validation(format!("cmp: unknown comparator {cmp_s:?}; allowed: {}", Comparator::ALLOWED)))?;
    let num = |name: &str, default: f64| param(&q, name).map_or(Ok(default), |s| parse_f64(name, s));
    let crit = CloudCriteria::new(observable, cmp, num("threshold", 1.8)?, num("alt_min", 0.0)?, num("alt_max", 30.0)?)
        .map_err(|e| ApiError::validation(e.to_string()))?;
    run(&st, &exp, &days_window(day, day, None), ChunkKind::CloudTop, ChunkParams::Cloud(crit)).await
}

async fn orbit(State(st): State<AppState>, Path(exp): Path<String>, Query(q): Params) -> Result<Response, ApiError> {
    let exp = known_experiment(&st, &exp)?;
    let day = required_day(&q)?;
    run(&st, &exp, &days_window(day, day, None), ChunkKind::Orbit, ChunkParams::None).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchRequest {
    exp_a: String,
    exp_b: String,
    from: String,
    to: String,
    dt_max_s: f64,
    dist_max_km: f64,
}

async fn match_experiments(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let started = Instant::now();
    let req: MatchRequest = serde_json::from_slice(&body).map_err(|e| ApiError::validation(format!("body: {e}")))?;
    let exp_a = known_experiment(&st, &req.exp_a)?;
    let exp_b = known_experiment(&st, &req.exp_b)?;
    let (from, to) = (parse_day("from", &req.from)?, parse_day("to", &req.to)?);
    if from > to {
        return Err(ApiError::validation(format!("from ({from}) is after to ({to})")));
    }
    let params = MatchParams::new(req.dt_max_s, req.dist_max_km).map_err(|e| ApiError::validation(e.to_string()))?;
    let cat = st.frontend.catalog();
    let total = |e: &ExperimentId| -> u128 { cat.list_days(e, Some(from), Some(to)).iter().map(|(_, n)| u128::from(*n)).sum() };
    let (na, nb) = (total(&exp_a), total(&exp_b));
    if na * nb > st.max_match_pairs {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "TOO_LARGE",
            format!("{na} x {nb} candidate pairs exceeds {}; narrow the day range", st.max_match_pairs),
        ));
    }
    let w = days_window(from, to, None);
    let (a, b) = tokio::join!(
        st.frontend.run_task(&exp_a, &w, ChunkKind::Records, ChunkParams::None),
        st.frontend.run_task(&exp_b, &w, ChunkKind::Records, ChunkParams::None),
    );
    let (a, b) = (a?, b?);
    let chunks = a.chunks.len() + b.chunks.len();
    let threads = st.match_threads;
    let data = tokio::task::spawn_blocking(move || -> Result<(String, u64), String> {
        let ra = parse_record_array(&a.payload).map_err(|e| e.to_string())?;
        let rb = parse_record_array(&b.payload).map_err(|e| e.to_string())?;
        let m = match_indexed(&ra, &rb, &params, threads);
        Ok((matches_to_json(&m), m.len() as u64))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e))?;
    Ok(envelope(&data.0, data.1, chunks, started, None))
}

async fn cluster_status(State(st): State<AppState>) -> Response {
    let started = Instant::now();
    let items = st
        .frontend
        .status()
        .into_iter()
        .map(|w| {
            json!({
                "address": w.address,
                "completed_chunks": w.completed_chunks,
                "inflight_chunks": w.inflight_chunks,
                "last_heartbeat": w.last_heartbeat.to_iso8601(),
                "state": w.state,
                "worker_id": w.worker_id,
            })
        })
        .collect();
    let extra = st.supervisor.as_ref().map(|s| {
        let failures: Vec<Value> = s
            .status()
            .into_iter()
            .filter_map(|slot| slot.failed.map(|why| json!({"restarts": slot.restarts, "slot": slot.slot, "reason": why})))
            .collect();
        ("spawn_failures", Value::Array(failures))
    });
    value_envelope(items, started, extra)
}

async fn healthz(State(st): State<AppState>) -> Response {
    if st.frontend.live_workers() > 0 {
        json_response(StatusCode::OK, r#"{"ok":true}"#.into())
    } else {
        json_response(StatusCode::SERVICE_UNAVAILABLE, r#"{"ok":false}"#.into())
    }
}

async fn api_not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/experiments", get(experiments))
        .route("/experiments/{exp}/days", get(days))
        .route("/experiments/{exp}/records", get(records))
        .route("/experiments/{exp}/cloudtop", get(cloudtop))
        .route("/experiments/{exp}/orbit", get(orbit))
        .route("/match", post(match_experiments))
        .route("/cluster/status", get(cluster_status))
        .fallback(api_not_found);
    let app = Router::new()
        .nest("/api/v1", api)
        .route("/api", get(api_not_found))
        .route("/api/{*rest}", get(api_not_found).post(api_not_found))
        .route("/healthz", get(healthz));
    let app = match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.fallback(api_not_found),
    };
    app.layer(CorsLayer::permissive()).with_state(state)
}

/// Serves `router` on `listen` until `shutdown` resolves.
pub async fn serve_http(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Binds `listen` and serves in the background; returns the bound address.
pub async fn spawn_http(listen: SocketAddr, app: Router) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    let addr = listener.local_addr()?;
    let h = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok((addr, h))
}
