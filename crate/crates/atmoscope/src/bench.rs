//! Desk-scale benchmarks: per-day REST latency against an in-process cluster
//! and indexed-versus-brute-force matching.

use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use atmoscope_core::matcher::match_bruteforce;
use atmoscope_core::synth::{generate_synthetic, OrbitModel};
use atmoscope_core::{Date, ExperimentId, MatchParams, ObservationRecord};

use crate::api::{router, spawn_http, AppState};
use crate::cluster::worker::{spawn_thread_worker, WorkerControl, WorkerOptions};
use crate::cluster::FrontEnd;
use crate::matching::match_indexed;
use crate::store::{Catalog, CatalogMode, ReadOnlyCatalog};

pub const SERVE_CSV_HEADER: &str = "day_index,n_points,elapsed_ms,us_per_point,workers";
pub const THROUGHPUT_CSV_HEADER: &str = "workers,run,total_ms";
pub const MATCH_CSV_HEADER: &str = "size,threads,bruteforce_ms,indexed_ms,speedup,matched";

pub const BENCH_EXPERIMENT: &str = "mipas";

pub fn bench_first_day() -> Date {
    Date::new(2002, 7, 1).expect("valid date")
}

pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of nothing");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Generates `days` days from 2002-07-01 into `root` (which must not hold
/// that experiment yet).
pub fn build_corpus(root: &Path, experiment: &str, days: u32, model: &OrbitModel) -> anyhow::Result<u64> {
    let exp = ExperimentId::new(experiment).map_err(|e| anyhow::anyhow!("{e}"))?;
    let first = bench_first_day();
    let last = Date::from_days_since_epoch(first.days_since_epoch() + i64::from(days.max(1)) - 1);
    let mut cat = Catalog::open(root, CatalogMode::ReadWrite)?;
    let mut n = 0;
    for (day, recs) in generate_synthetic(model, &exp, first, last) {
        if !recs.is_empty() {
            n += recs.len() as u64;
            cat.publish_segment(&exp, day, recs, false)?;
        }
    }
    Ok(n)
}

/// Front-end, `workers` in-process workers and the HTTP API on ephemeral
/// localhost ports.
pub struct LocalCluster {
    pub runtime: tokio::runtime::Runtime,
    pub frontend: FrontEnd,
    pub http: SocketAddr,
    pub workers: Vec<WorkerControl>,
}

impl LocalCluster {
    pub fn start(catalog_root: &Path, workers: u32, heartbeat: Duration) -> anyhow::Result<LocalCluster> {
        Self::start_with(catalog_root, workers, heartbeat, |_| {})
    }

    /// Like [`LocalCluster::start`], letting the caller adjust the API state.
    pub fn start_with(
        catalog_root: &Path,
        workers: u32,
        heartbeat: Duration,
        tweak: impl FnOnce(&mut AppState),
    ) -> anyhow::Result<LocalCluster> {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let catalog = Arc::new(ReadOnlyCatalog::open(catalog_root)?);
        let (frontend, http) = runtime.block_on(async {
            let fe = FrontEnd::start(catalog.clone(), "127.0.0.1:0".parse().expect("literal"), heartbeat).await?;
            let mut state = AppState::new(fe.clone());
            tweak(&mut state);
            let (http, _) = spawn_http("127.0.0.1:0".parse().expect("literal"), router(state, None)).await?;
            anyhow::Ok((fe, http))
        })?;
        let mut ctls = Vec::new();
        for i in 0..workers {
            let mut opts = WorkerOptions::new(frontend.worker_addr().to_string());
            opts.label = format!("bench thread {i}");
            let (ctl, _) = spawn_thread_worker(catalog.clone(), opts);
            if !runtime.block_on(frontend.wait_for_workers(i as usize + 1, Duration::from_secs(10))) {
                bail!("worker {i} did not become ready");
            }
            ctls.push(ctl);
        }
        Ok(LocalCluster { runtime, frontend, http, workers: ctls })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.http, path)
    }

    pub fn shutdown(self) {
        self.frontend.shutdown();
        self.runtime.shutdown_timeout(Duration::from_secs(1));
    }
}

/// GET on a fresh connection; returns (status, body, wall time).
pub fn http_get(url: &str) -> anyhow::Result<(u16, String, Duration)> {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let started = Instant::now();
    let mut resp = agent.get(url).call().with_context(|| format!("GET {url}"))?;
    let status = resp.status().as_u16();
    let body = resp.body_mut().with_config().limit(1 << 30).read_to_string()?;
    Ok((status, body, started.elapsed()))
}

pub fn http_post(url: &str, body: &str) -> anyhow::Result<(u16, String)> {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = agent
        .post(url)
        .header("content-type", "application/json")
        .send(body)
        .with_context(|| format!("POST {url}"))?;
    let status = resp.status().as_u16();
    Ok((status, resp.body_mut().with_config().limit(1 << 30).read_to_string()?))
}

#[derive(Debug, Clone)]
pub struct ServeBench {
    pub days: u32,
    pub workers: Vec<u32>,
    pub repeat: u32,
    pub seed: u64,
    /// Reuse an existing catalog instead of generating one.
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayRow {
    pub day_index: u32,
    pub n_points: u64,
    pub elapsed_ms: f64,
    pub us_per_point: f64,
    pub workers: u32,
}

impl DayRow {
    pub fn new(day_index: u32, n_points: u64, elapsed_ms: f64, workers: u32) -> DayRow {
        let us_per_point = if n_points == 0 { 0.0 } else { 1000.0 * elapsed_ms / n_points as f64 };
        DayRow { day_index, n_points, elapsed_ms, us_per_point, workers }
    }

    pub fn csv(&self) -> String {
        format!("{},{},{:.3},{:.3},{}", self.day_index, self.n_points, self.elapsed_ms, self.us_per_point, self.workers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Throughput {
    pub workers: u32,
    /// Wall time of each run requesting all days at once.
    pub runs_ms: Vec<f64>,
}

impl Throughput {
    pub fn median_ms(&self) -> f64 {
        median(&self.runs_ms)
    }
}

fn meta_count(body: &str) -> anyhow::Result<u64> {
    let v: serde_json::Value = serde_json::from_str(body)?;
    v["meta"]["count"].as_u64().context("response lacks meta.count")
}

/// Requests each day `repeat` times on a fresh connection and reports the
/// median per day, then times `repeat` runs that request every day
/// concurrently.
pub fn run_serve_bench(cfg: &ServeBench, mut on_row: impl FnMut(&DayRow)) -> anyhow::Result<(Vec<DayRow>, Vec<Throughput>)> {
    if cfg.days == 0 || cfg.repeat == 0 || cfg.workers.is_empty() || cfg.workers.contains(&0) {
        bail!("days, repeat and every worker count must be positive");
    }
    let tmp;
    let root = match &cfg.catalog {
        Some(p) => p.clone(),
        None => {
            tmp = tempfile::tempdir()?;
            build_corpus(tmp.path(), BENCH_EXPERIMENT, cfg.days, &OrbitModel { seed: cfg.seed, ..OrbitModel::default() })?;
            tmp.path().to_path_buf()
        }
    };
    let days: Vec<Date> = bench_first_day()
        .iter_through(Date::from_days_since_epoch(bench_first_day().days_since_epoch() + i64::from(cfg.days) - 1))
        .collect();
    let mut rows = Vec::new();
    let mut through = Vec::new();
    for &w in &cfg.workers {
        let cluster = LocalCluster::start(&root, w, Duration::from_millis(2000))?;
        let url = |d: &Date| cluster.url(&format!("/api/v1/experiments/{BENCH_EXPERIMENT}/records?day={d}"));
        for (i, d) in days.iter().enumerate() {
            let mut times = Vec::new();
            let mut n = 0;
            for _ in 0..cfg.repeat {
                let (status, body, t) = http_get(&url(d))?;
                if status != 200 {
                    bail!("GET {} -> {status}: {body}", url(d));
                }
                n = meta_count(&body)?;
                times.push(ms(t));
            }
            let row = DayRow::new(i as u32 + 1, n, median(&times), w);
            on_row(&row);
            rows.push(row);
        }
        let mut runs = Vec::new();
        for _ in 0..cfg.repeat {
            let urls: Vec<String> = days.iter().map(url).collect();
            let started = Instant::now();
            let handles: Vec<_> = urls.into_iter().map(|u| thread::spawn(move || http_get(&u))).collect();
            for h in handles {
                let (status, body, _) = h.join().map_err(|_| anyhow::anyhow!("client thread panicked"))??;
                if status != 200 {
                    bail!("concurrent GET -> {status}: {body}");
                }
            }
            runs.push(ms(started.elapsed()));
        }
        through.push(Throughput { workers: w, runs_ms: runs });
        cluster.shutdown();
    }
    Ok((rows, through))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchRow {
    pub size: usize,
    pub threads: usize,
    pub bruteforce_ms: f64,
    pub indexed_ms: f64,
    pub matched: usize,
}

impl MatchRow {
    pub fn speedup(&self) -> f64 {
        self.bruteforce_ms / self.indexed_ms.max(1e-6)
    }

    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.3},{:.3},{:.2},{}",
            self.size,
            self.threads,
            self.bruteforce_ms,
            self.indexed_ms,
            self.speedup(),
            self.matched
        )
    }
}

/// Two synthetic instruments with different seeds and inclinations,
/// `size` records each, consecutive days from 2002-07-01.
pub fn match_inputs(size: usize) -> (Vec<ObservationRecord>, Vec<ObservationRecord>) {
    fn take(model: &OrbitModel, name: &str, size: usize) -> Vec<ObservationRecord> {
        let exp = ExperimentId::new(name).expect("valid id");
        let mut out = Vec::with_capacity(size);
        let mut day = bench_first_day();
        while out.len() < size {
            out.extend(generate_synthetic(model, &exp, day, day).into_iter().flat_map(|(_, r)| r).take(size - out.len()));
            day = day.succ();
        }
        out
    }
    let a = OrbitModel { seed: 1, dropout: false, ..OrbitModel::default() };
    let b = OrbitModel { seed: 2, dropout: false, inclination_deg: 98.2, period_s: 5933.0, scan_interval_s: 60.0, ..OrbitModel::default() };
    (take(&a, "mipas", size), take(&b, "mls", size))
}

/// Times both matchers on the same input and fails if they disagree.
pub fn run_match_bench(size: usize, threads: usize, params: &MatchParams) -> anyhow::Result<MatchRow> {
    let (a, b) = match_inputs(size);
    let t = Instant::now();
    let brute = match_bruteforce(&a, &b, params);
    let bruteforce_ms = ms(t.elapsed());
    let t = Instant::now();
    let indexed = match_indexed(&a, &b, params, threads);
    let indexed_ms = ms(t.elapsed());
    if brute != indexed {
        bail!("indexed and brute-force matchers disagree at size {size}");
    }
    Ok(MatchRow { size, threads, bruteforce_ms, indexed_ms, matched: indexed.iter().filter(|m| m.is_some()).count() })
}

pub fn write_csv<W: Write>(mut w: W, header: &str, rows: impl IntoIterator<Item = String>) -> io::Result<()> {
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    Ok(())
}
