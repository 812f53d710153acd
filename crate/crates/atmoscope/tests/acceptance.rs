//! Acceptance run: one line per criterion, nonzero exit if any fails.
//!
//! `cargo test -p atmoscope --test acceptance`

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use atmoscope::bench::{self, http_get, run_match_bench, run_serve_bench, LocalCluster, ServeBench};
use atmoscope::cluster::worker::{check_intent, spawn_thread_worker, WorkerOptions};
use atmoscope::cluster::FrontEnd;
use atmoscope::config::Config;
use atmoscope::matching::match_indexed;
use atmoscope::store::ReadOnlyCatalog;
use atmoscope::wire::records_to_json;
use atmoscope_core::matcher::match_bruteforce;
use atmoscope_core::registry::WorkerState;
use atmoscope_core::schedule::{ChunkKind, ChunkParams};
use atmoscope_core::synth::OrbitModel;
use atmoscope_core::{BBox, MatchParams, ObservationRecord, QueryWindow, Timestamp};
use common::golden::{check_all, golden_corpus};
use common::{exp, first_day, model, seed_catalog};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;

enum Verdict {
    Pass(String),
    /// The host cannot evaluate the criterion; the measurement is still shown.
    Skip(String),
}

type Check = Result<Verdict, String>;

type Criterion = (&'static str, &'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn sample<S: Strategy>(runner: &mut TestRunner, s: &S) -> S::Value {
    s.new_tree(runner).expect("strategy").current()
}

fn window_strategy() -> impl Strategy<Value = QueryWindow> {
    let t0 = first_day().start().unwrap().epoch_ms();
    (
        0..12 * 86_400_000u64,
        0..4 * 86_400_000u64,
        proptest::option::of((-90.0..90.0f64, 0.0..60.0f64, -180.0..180.0f64, -180.0..180.0f64)),
    )
        .prop_map(move |(start, len, bb)| {
            let from = Timestamp::from_epoch_ms(t0 - 86_400_000 + start);
            let to = Timestamp::from_epoch_ms(from.epoch_ms() + len);
            let bbox = bb.map(|(lat, h, lo1, lo2)| BBox::new(lat, (lat + h).min(90.0), lo1, lo2).unwrap());
            QueryWindow::new(from, to, bbox).unwrap()
        })
}

fn ids(v: &[ObservationRecord]) -> Vec<u64> {
    v.iter().map(|r| r.record_id).collect()
}

fn p1_store_oracle() -> Check {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let all = seed_catalog(dir.path(), "mipas", 10, &OrbitModel { dropout: false, ..model(3) });
    ensure!(all.len() >= 10_000, "only {} records", all.len());
    let cat = ReadOnlyCatalog::open(dir.path()).unwrap();
    let mut runner = TestRunner::deterministic();
    let strategy = window_strategy();
    let mut hits = 0;
    for i in 0..100 {
        let w = sample(&mut runner, &strategy);
        let got = cat.query(&exp("mipas"), &w).unwrap();
        let mut want: Vec<&ObservationRecord> = all.iter().filter(|r| w.matches(r.time, r.geo)).collect();
        want.sort_by_key(|r| (r.time, r.record_id));
        let want: Vec<u64> = want.iter().map(|r| r.record_id).collect();
        ensure!(ids(&got) == want, "window {i} ({w:?}): {} ids, linear scan {}", got.len(), want.len());
        hits += got.len();
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(Verdict::Pass(format!("{} records, 100 windows, {hits} rows compared, {secs:.1} s", all.len())))
}

fn p2_matcher_oracle() -> Check {
    let started = Instant::now();
    let (a, b) = bench::match_inputs(2000);
    let mut runner = TestRunner::deterministic();
    let tol = (1.0..7200.0f64, 1.0..3000.0f64);
    let mut matched = 0;
    for _ in 0..20 {
        let (dt, dist) = sample(&mut runner, &tol);
        let params = MatchParams::new(dt, dist).unwrap();
        let oracle = match_bruteforce(&a, &b, &params);
        for threads in [1, 2, 8] {
            ensure!(match_indexed(&a, &b, &params, threads) == oracle, "dt {dt:.1} s, dist {dist:.1} km, {threads} threads differ");
        }
        matched += oracle.iter().filter(|m| m.is_some()).count();
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.1} s");
    Ok(Verdict::Pass(format!("2000x2000, 20 tolerance draws x threads 1/2/8, {matched} matches, {secs:.1} s")))
}

fn p3_matcher_speedup() -> Check {
    let threads = cores();
    let row = run_match_bench(20_000, threads, &MatchParams::new(900.0, 300.0).unwrap()).map_err(|e| e.to_string())?;
    let detail = format!(
        "brute force {:.0} ms, indexed {:.1} ms ({threads} threads, {cores} cores), speedup {:.1}x",
        row.bruteforce_ms,
        row.indexed_ms,
        row.speedup(),
        cores = cores()
    );
    ensure!(row.speedup() >= 5.0, "{detail}");
    Ok(Verdict::Pass(detail))
}

fn twenty_days() -> QueryWindow {
    let from = first_day().start().unwrap();
    QueryWindow::new(from, Timestamp::from_epoch_ms(from.epoch_ms() + 20 * 86_400_000), None).unwrap()
}

/// Front-end plus thread workers, registered in order.
async fn cluster(cat: Arc<ReadOnlyCatalog>, die_after: &[Option<u64>]) -> FrontEnd {
    let fe = FrontEnd::start(cat.clone(), "127.0.0.1:0".parse().unwrap(), Duration::from_secs(2)).await.unwrap();
    for (i, d) in die_after.iter().enumerate() {
        let mut o = WorkerOptions::new(fe.worker_addr().to_string());
        o.die_after_chunks = *d;
        spawn_thread_worker(cat.clone(), o);
        assert!(fe.wait_for_workers(i + 1, Duration::from_secs(5)).await, "worker {} did not register", i + 1);
    }
    fe
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap()
}

fn twenty_day_catalog() -> (tempfile::TempDir, Arc<ReadOnlyCatalog>) {
    let dir = tempfile::tempdir().unwrap();
    seed_catalog(dir.path(), "mipas", 20, &model(21));
    let cat = Arc::new(ReadOnlyCatalog::open(dir.path()).unwrap());
    (dir, cat)
}

fn p4_transparency() -> Check {
    let (_dir, cat) = twenty_day_catalog();
    let w = twenty_days();
    let direct = records_to_json(&cat.query(&exp("mipas"), &w).unwrap());
    let rt = runtime();
    for n in [1, 2] {
        let out = rt.block_on(async {
            let fe = cluster(cat.clone(), &vec![None; n]).await;
            let out = fe.run_task(&exp("mipas"), &w, ChunkKind::Records, ChunkParams::None).await;
            fe.shutdown();
            out
        });
        let out = out.map_err(|e| format!("{n} workers: {e}"))?;
        ensure!(out.payload == direct, "{n} workers: payload differs from the direct query");
        ensure!(out.chunks.len() == 20, "{n} workers: {} chunks", out.chunks.len());
    }
    Ok(Verdict::Pass(format!("20 days, {} bytes identical for 1 and 2 workers", direct.len())))
}

fn p5_fault_tolerance() -> Check {
    let (_dir, cat) = twenty_day_catalog();
    let w = twenty_days();
    let direct = records_to_json(&cat.query(&exp("mipas"), &w).unwrap());
    let rt = runtime();
    let (out, dead) = rt.block_on(async {
        // worker 2 drops its connection when handed its second chunk
        let fe = cluster(cat.clone(), &[None, Some(1)]).await;
        let out = fe.run_task(&exp("mipas"), &w, ChunkKind::Records, ChunkParams::None).await;
        let dead = fe.status().iter().any(|s| s.worker_id == 2 && s.state == WorkerState::Dead);
        fe.shutdown();
        (out, dead)
    });
    let out = out.map_err(|e| e.to_string())?;
    ensure!(dead, "worker 2 not marked DEAD");
    ensure!(out.payload == direct, "payload differs after the kill");
    let idx: Vec<u32> = out.chunks.iter().map(|c| c.chunk_index).collect();
    let unique: BTreeSet<u32> = idx.iter().copied().collect();
    ensure!(idx.len() == 20 && unique == (0..20).collect(), "chunk indices {idx:?}");
    let moved = out.chunks.iter().filter(|c| c.workers.len() > 1).count();
    ensure!(moved > 0, "no chunk was reassigned, so the kill was not mid-task");
    Ok(Verdict::Pass(format!("worker 2 killed after 1 chunk; {moved} chunk(s) reassigned; 20 distinct chunks; payload identical")))
}

fn p6_scaling() -> Check {
    let cfg = ServeBench { days: 20, workers: vec![1, 2], repeat: 5, seed: 1, catalog: None };
    let (_, through) = run_serve_bench(&cfg, |_| {}).map_err(|e| e.to_string())?;
    let (one, two) = (through[0].median_ms(), through[1].median_ms());
    let ratio = two / one;
    let detail = format!("20-day median wall time 1 worker {one:.1} ms, 2 workers {two:.1} ms, ratio {ratio:.2} (limit 0.75)");
    let n = cores();
    if n < 4 {
        return Ok(Verdict::Skip(format!("not evaluated on this host ({n} cores); {detail}")));
    }
    ensure!(ratio <= 0.75, "{detail}");
    Ok(Verdict::Pass(detail))
}

fn p7_latency() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let n = bench::build_corpus(dir.path(), "mipas", 1, &OrbitModel { dropout: false, ..model(1) }).map_err(|e| e.to_string())?;
    let c = LocalCluster::start(dir.path(), 1, Duration::from_secs(2)).map_err(|e| e.to_string())?;
    let url = c.url(&format!("/api/v1/experiments/mipas/records?day={}", bench::bench_first_day()));
    let mut times = Vec::new();
    for _ in 0..21 {
        let (status, body, t) = http_get(&url).map_err(|e| e.to_string())?;
        ensure!(status == 200, "{status}: {body}");
        times.push(t.as_secs_f64() * 1000.0);
    }
    c.shutdown();
    let med = bench::median(&times);
    let detail = format!("{n} points, median {med:.2} ms over 21 requests, {:.1} us per point", 1000.0 * med / n as f64);
    ensure!(med <= 150.0, "{detail}");
    Ok(Verdict::Pass(detail))
}

fn p8_golden_and_liveness() -> Check {
    let dir = tempfile::tempdir().unwrap();
    golden_corpus(dir.path());
    let c = LocalCluster::start(dir.path(), 2, Duration::from_secs(2)).map_err(|e| e.to_string())?;
    std::thread::sleep(Duration::from_millis(200));
    check_all(&c, false)?;

    let (status, _, _) = http_get(&c.url("/healthz")).map_err(|e| e.to_string())?;
    ensure!(status == 200, "healthz {status} with two workers");
    let started = Instant::now();
    c.workers[0].kill();
    c.workers[1].pause_heartbeats(true);
    let both_dead = loop {
        let st = c.frontend.status();
        if [1, 2].iter().all(|id| st.iter().any(|s| s.worker_id == *id && s.state == WorkerState::Dead)) {
            break started.elapsed();
        }
        ensure!(started.elapsed() < Duration::from_secs(7), "workers not DEAD after 7 s: {st:?}");
        std::thread::sleep(Duration::from_millis(50));
    };
    let (status, body, _) = http_get(&c.url("/healthz")).map_err(|e| e.to_string())?;
    ensure!(status == 503, "healthz {status} {body} after both workers died");
    c.shutdown();
    Ok(Verdict::Pass(format!("20 golden responses identical; killed and silenced workers DEAD after {:.1} s; healthz 503", both_dead.as_secs_f64())))
}

/// The writable catalog type and its mutators; the serving tier must only
/// name `ReadOnlyCatalog`.
const FORBIDDEN: &str = r"\b(Catalog|CatalogMode|publish_segment|stage_segment)\b";

fn serving_sources() -> Vec<std::path::PathBuf> {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("src");
    let mut files = vec![src.join("api.rs"), src.join("serve.rs")];
    for e in std::fs::read_dir(src.join("cluster")).unwrap() {
        files.push(e.unwrap().path());
    }
    files
}

fn p9_read_only_tier() -> Check {
    let dir = tempfile::tempdir().unwrap();
    seed_catalog(&dir.path().join("cat"), "mipas", 1, &model(1));
    let text = "catalog = \"cat\"\ncatalog_mode = \"read_write\"\n";
    let cfg = Config::parse(text, dir.path()).map_err(|e| e.to_string())?;
    ensure!(check_intent(&cfg).is_err(), "check_intent accepted read_write");
    let file = dir.path().join("worker.toml");
    std::fs::write(&file, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_atmoscope")).args(["worker", "--config"]).arg(&file).output().unwrap();
    ensure!(out.status.code() == Some(2), "worker exited with {:?}", out.status);

    let forbidden = regex::Regex::new(FORBIDDEN).unwrap();
    let mut scanned = 0;
    for f in serving_sources() {
        let text = std::fs::read_to_string(&f).unwrap();
        for (n, line) in text.lines().enumerate() {
            if let Some(m) = forbidden.find(line) {
                return Err(format!("{}:{}: uses {}", f.display(), n + 1, m.as_str()));
            }
        }
        scanned += 1;
    }
    Ok(Verdict::Pass(format!("read_write worker exits 2; {scanned} serving sources free of catalog writes")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("P1", "store query equals linear scan", p1_store_oracle),
        ("P2", "indexed matcher equals brute force", p2_matcher_oracle),
        ("P3", "matcher speedup >= 5x at 20000", p3_matcher_speedup),
        ("P4", "cluster payload equals direct query", p4_transparency),
        ("P5", "worker kill mid-task is transparent", p5_fault_tolerance),
        ("P6", "2 workers <= 0.75x 1 worker", p6_scaling),
        ("P7", "one-day REST median <= 150 ms", p7_latency),
        ("P8", "golden REST suite and liveness", p8_golden_and_liveness),
        ("P9", "read-only serving tier", p9_read_only_tier),
    ];
    let mut failed = 0;
    for (id, title, f) in criteria {
        let started = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match res {
            Ok(Verdict::Pass(d)) => ("PASS", d),
            Ok(Verdict::Skip(d)) => ("SKIP", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{id} {tag} {title}: {detail} [{secs:.1} s]");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
