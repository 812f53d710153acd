use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use atmoscope::bench::{self, ServeBench};
use atmoscope::cluster::worker::{check_intent, run_worker, WorkerControl, WorkerError, WorkerExit, WorkerOptions};
use atmoscope::config::Config;
use atmoscope::ingest::{self, ParseMode};
use atmoscope::matching::match_indexed;
use atmoscope::store::{Catalog, CatalogMode, ReadOnlyCatalog, StoreError};
use atmoscope::wire::matches_to_json;
use atmoscope_core::matcher::match_bruteforce;
use atmoscope_core::synth::{generate_synthetic, OrbitModel};
use atmoscope_core::{Date, ExperimentId, MatchParams, ObservationRecord};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "atmoscope", version, about = "Geotemporal satellite observation store, query cluster and matcher")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a record file and publish one segment per UTC day
    Ingest(IngestArgs),
    /// Generate synthetic orbit data and publish it
    Gen(GenArgs),
    /// Run the front-end: REST API, scheduler and local workers
    Serve(ServeArgs),
    /// Run a back-end worker that registers with a front-end
    Worker(WorkerArgs),
    /// Match two experiments and print the pairs as JSON
    Match(MatchArgs),
    /// Benchmarks emitting CSV
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["jsonl", "delimited"])))]
struct IngestArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    experiment: String,
    /// Newline-delimited JSON records (gzip detected)
    #[arg(long)]
    jsonl: Option<PathBuf>,
    /// `;`-delimited text: time;lat;lon;orbit;<schema columns> (gzip detected)
    #[arg(long, requires = "schema")]
    delimited: Option<PathBuf>,
    /// Comma-separated observable column names for --delimited
    #[arg(long)]
    schema: Option<String>,
    /// Overwrite days that already exist
    #[arg(long)]
    replace: bool,
    /// Skip malformed lines instead of aborting
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    experiment: String,
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seconds between scans
    #[arg(long, default_value_t = 65.0)]
    interval: f64,
    #[arg(long, default_value_t = 98.55)]
    inclination: f64,
    #[arg(long, default_value_t = 6035.0)]
    period: f64,
    /// Keep every scan (no per-day drop-out)
    #[arg(long)]
    no_dropout: bool,
    #[arg(long)]
    replace: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Config file; defaults to $ATMOSCOPE_CONFIG
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct WorkerArgs {
    /// Config file; defaults to $ATMOSCOPE_CONFIG
    #[arg(long)]
    config: Option<PathBuf>,
    /// Front-end worker address, overriding the config
    #[arg(long)]
    frontend: Option<String>,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    exp_a: String,
    #[arg(long)]
    exp_b: String,
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    /// Time tolerance in seconds
    #[arg(long, default_value_t = 900.0)]
    dt: f64,
    /// Distance tolerance in kilometres
    #[arg(long, default_value_t = 300.0)]
    dist: f64,
    #[arg(long)]
    threads: Option<usize>,
    /// Use the all-pairs reference matcher
    #[arg(long)]
    bruteforce: bool,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Per-day REST latency against an in-process cluster
    Serve(BenchServeArgs),
    /// Indexed versus brute-force matcher timings
    Match(BenchMatchArgs),
}

#[derive(Args)]
struct BenchServeArgs {
    #[arg(long, default_value_t = 20)]
    days: u32,
    /// Worker counts to measure, comma separated
    #[arg(long, value_delimiter = ',', default_value = "1")]
    workers: Vec<u32>,
    #[arg(long, default_value_t = 3)]
    repeat: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Benchmark an existing catalog (experiment "mipas") instead of generating one
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Also write per-run totals of the all-days-at-once runs
    #[arg(long)]
    throughput_csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchMatchArgs {
    #[arg(long, default_value_t = 20_000)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 900.0)]
    dt: f64,
    #[arg(long, default_value_t = 300.0)]
    dist: f64,
}

enum Failure {
    /// Bad arguments or a conflict with existing data: exit 2.
    Usage(String),
    /// Exit 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn experiment(s: &str) -> Result<ExperimentId, Failure> {
    ExperimentId::new(s).map_err(|e| usage(format!("--experiment: {e}")))
}

fn day_arg(flag: &str, s: &str) -> Result<Date, Failure> {
    Date::parse(s).ok().filter(|d| d.start().is_some()).ok_or_else(|| usage(format!("{flag}: expected YYYY-MM-DD, got {s:?}")))
}

fn day_range(from: &str, to: &str) -> Result<(Date, Date), Failure> {
    let (f, t) = (day_arg("--from", from)?, day_arg("--to", to)?);
    if f > t {
        return Err(usage(format!("--from {f} is after --to {t}")));
    }
    Ok((f, t))
}

fn store_failure(e: StoreError) -> Failure {
    match e {
        StoreError::Conflict { .. } | StoreError::Locked(_) => usage(e.to_string()),
        e => Failure::Runtime(e.into()),
    }
}

/// Publishes per-day groups after checking none conflicts, then prints the
/// per-day table.
fn publish(catalog: &Path, exp: &ExperimentId, days: Vec<(Date, Vec<ObservationRecord>)>, replace: bool) -> CmdResult {
    let mut cat = Catalog::open(catalog, CatalogMode::ReadWrite).map_err(store_failure)?;
    if !replace {
        let existing = cat.day_counts(exp);
        if let Some((d, _)) = days.iter().find(|(d, r)| !r.is_empty() && existing.contains_key(d)) {
            return Err(usage(format!("{exp} {d} already exists; pass --replace to overwrite")));
        }
    }
    let mut out = io::stdout().lock();
    let (mut total, mut segs) = (0usize, 0usize);
    for (day, recs) in days {
        if recs.is_empty() {
            continue;
        }
        let n = recs.len();
        cat.publish_segment(exp, day, recs, replace).map_err(store_failure)?;
        writeln!(out, "{day}  {n:>6}")?;
        total += n;
        segs += 1;
    }
    writeln!(out, "{total} records in {segs} segments")?;
    Ok(())
}

fn cmd_ingest(a: IngestArgs) -> CmdResult {
    let exp = experiment(&a.experiment)?;
    let mode = if a.lenient { ParseMode::Lenient } else { ParseMode::Strict };
    let (path, parsed) = match (&a.jsonl, &a.delimited) {
        (Some(p), None) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            (p, ingest::parse_jsonl(f, &exp, mode))
        }
        (None, Some(p)) => {
            let schema = ingest::parse_schema(a.schema.as_deref().unwrap_or_default()).map_err(|e| usage(e.to_string()))?;
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            (p, ingest::parse_delimited(f, &schema, &exp, mode))
        }
        _ => return Err(usage("exactly one of --jsonl or --delimited is required")),
    };
    let parsed = parsed.map_err(|e| Failure::Runtime(anyhow::anyhow!("{}: {e}", path.display())))?;
    if parsed.skipped > 0 {
        for e in &parsed.errors {
            eprintln!("{}:{}: skipped: {}", path.display(), e.line, e.reason);
        }
        eprintln!("{} malformed lines skipped", parsed.skipped);
    }
    let groups = ingest::group_by_day(parsed.records).into_iter().collect();
    publish(&a.catalog, &exp, groups, a.replace)
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    let exp = experiment(&a.experiment)?;
    let (from, to) = day_range(&a.from, &a.to)?;
    let model = OrbitModel {
        inclination_deg: a.inclination,
        period_s: a.period,
        scan_interval_s: a.interval,
        seed: a.seed,
        dropout: !a.no_dropout,
        ..OrbitModel::default()
    };
    model.validate().map_err(|e| usage(e.to_string()))?;
    publish(&a.catalog, &exp, generate_synthetic(&model, &exp, from, to), a.replace)
}

fn load_config(flag: Option<&Path>) -> Result<(Config, Option<PathBuf>), Failure> {
    let path = Config::locate(flag).ok_or_else(|| usage("no config: pass --config or set ATMOSCOPE_CONFIG"))?;
    let cfg = Config::load(&path).map_err(|e| usage(e.to_string()))?;
    Ok((cfg, Some(path)))
}

async fn termination() {
    let ctrl_c = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = ctrl_c => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = ctrl_c.await;
    }
}

fn cmd_serve(a: ServeArgs) -> CmdResult {
    let (cfg, path) = load_config(a.config.as_deref())?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(atmoscope::serve::serve(&cfg, path.as_deref(), termination()))?;
    Ok(())
}

fn cmd_worker(a: WorkerArgs) -> CmdResult {
    let (cfg, _) = load_config(a.config.as_deref())?;
    check_intent(&cfg).map_err(|e| usage(e.to_string()))?;
    let catalog = ReadOnlyCatalog::open(&cfg.catalog).with_context(|| format!("opening catalog {}", cfg.catalog.display()))?;
    let mut opts = WorkerOptions::new(a.frontend.unwrap_or(cfg.frontend));
    opts.connect_retries = cfg.connect_retries;
    match run_worker(&catalog, &opts, &WorkerControl::default()) {
        Ok(WorkerExit::Shutdown) => Ok(()),
        Ok(WorkerExit::Killed) => Err(Failure::Runtime(anyhow::anyhow!("worker killed"))),
        Err(e @ WorkerError::ReadWriteIntent) => Err(usage(e.to_string())),
        Err(e) => Err(Failure::Runtime(e.into())),
    }
}

fn cmd_match(a: MatchArgs) -> CmdResult {
    let (from, to) = day_range(&a.from, &a.to)?;
    let params = MatchParams::new(a.dt, a.dist).map_err(|e| usage(e.to_string()))?;
    let ea = ExperimentId::new(&a.exp_a).map_err(|e| usage(format!("--exp-a: {e}")))?;
    let eb = ExperimentId::new(&a.exp_b).map_err(|e| usage(format!("--exp-b: {e}")))?;
    let cat = ReadOnlyCatalog::open(&a.catalog).map_err(|e| Failure::Runtime(e.into()))?;
    let w = atmoscope::api::days_window(from, to, None);
    let ra = cat.query(&ea, &w).map_err(|e| Failure::Runtime(e.into()))?;
    let rb = cat.query(&eb, &w).map_err(|e| Failure::Runtime(e.into()))?;
    let threads = a.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    let m = if a.bruteforce { match_bruteforce(&ra, &rb, &params) } else { match_indexed(&ra, &rb, &params, threads) };
    let mut out = io::stdout().lock();
    out.write_all(matches_to_json(&m).as_bytes())?;
    writeln!(out)?;
    Ok(())
}

fn cmd_bench(b: BenchCmd) -> CmdResult {
    match b {
        BenchCmd::Serve(a) => {
            let cfg = ServeBench { days: a.days, workers: a.workers, repeat: a.repeat, seed: a.seed, catalog: a.catalog };
            if cfg.days == 0 || cfg.repeat == 0 || cfg.workers.is_empty() || cfg.workers.contains(&0) {
                return Err(usage("--days, --repeat and --workers must be positive"));
            }
            println!("{}", bench::SERVE_CSV_HEADER);
            let (_, through) = bench::run_serve_bench(&cfg, |row| {
                println!("{}", row.csv());
            })?;
            for t in &through {
                eprintln!("# workers={} all-days wall time median {:.3} ms over {} runs", t.workers, t.median_ms(), t.runs_ms.len());
            }
            if let Some(p) = a.throughput_csv {
                let rows = through.iter().flat_map(|t| t.runs_ms.iter().enumerate().map(|(i, ms)| format!("{},{},{ms:.3}", t.workers, i + 1)));
                bench::write_csv(File::create(&p)?, bench::THROUGHPUT_CSV_HEADER, rows.collect::<Vec<_>>())?;
            }
            Ok(())
        }
        BenchCmd::Match(a) => {
            if a.size == 0 || a.threads == 0 {
                return Err(usage("--size and --threads must be positive"));
            }
            let params = MatchParams::new(a.dt, a.dist).map_err(|e| usage(e.to_string()))?;
            let row = bench::run_match_bench(a.size, a.threads, &params)?;
            bench::write_csv(io::stdout().lock(), bench::MATCH_CSV_HEADER, [row.csv()])?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("ATMOSCOPE_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(io::stderr)
        .init();
    let res = match cli.cmd {
        Cmd::Ingest(a) => cmd_ingest(a),
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Serve(a) => cmd_serve(a),
        Cmd::Worker(a) => cmd_worker(a),
        Cmd::Match(a) => cmd_match(a),
        Cmd::Bench(b) => cmd_bench(b),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
