//! Back-end worker: a blocking loop that registers with the front-end,
//! heartbeats from a side thread and executes chunks one at a time against a
//! read-only catalog.

use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::exec::execute;
use super::protocol::{self, read_message, ChunkResult, ErrorMsg, Heartbeat, Message, ProtocolError, Register};
use crate::config::{CatalogIntent, Config};
use crate::store::ReadOnlyCatalog;

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    #[error("workers only read the catalog; catalog_mode must be read_only")]
    ReadWriteIntent,
    #[error("cannot reach front-end at {addr} after {attempts} attempts: {source}")]
    Connect { addr: String, attempts: u32, source: std::io::Error },
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("front-end rejected registration: {0}")]
    Rejected(String),
}

/// Refuses any configuration asking for write access.
pub fn check_intent(cfg: &Config) -> Result<(), WorkerError> {
    match cfg.catalog_mode {
        CatalogIntent::ReadOnly => Ok(()),
        CatalogIntent::ReadWrite => Err(WorkerError::ReadWriteIntent),
    }
}

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    pub frontend: String,
    pub connect_retries: u32,
    pub label: String,
    /// Fault injection: after this many completed chunks, drop the
    /// connection upon receiving the next task.
    pub die_after_chunks: Option<u64>,
}

impl WorkerOptions {
    pub fn new(frontend: impl Into<String>) -> Self {
        WorkerOptions {
            frontend: frontend.into(),
            connect_retries: 5,
            label: format!("pid {}", std::process::id()),
            die_after_chunks: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerExit {
    /// The front-end sent `shutdown`.
    Shutdown,
    /// Stopped through [`WorkerControl::kill`] or fault injection.
    Killed,
}

#[derive(Default)]
struct ControlInner {
    killed: AtomicBool,
    heartbeats_paused: AtomicBool,
    stream: Mutex<Option<TcpStream>>,
    worker_id: Mutex<Option<u64>>,
}

/// Lets tests stop a worker abruptly or silence its heartbeats.
#[derive(Clone, Default)]
pub struct WorkerControl(Arc<ControlInner>);

impl WorkerControl {
    /// Drops the connection without a goodbye, like a crashed process.
    pub fn kill(&self) {
        self.0.killed.store(true, Ordering::SeqCst);
        if let Some(s) = self.0.stream.lock().unwrap().as_ref() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }

    pub fn pause_heartbeats(&self, paused: bool) {
        self.0.heartbeats_paused.store(paused, Ordering::SeqCst);
    }

    /// Id of the current registration.
    pub fn worker_id(&self) -> Option<u64> {
        *self.0.worker_id.lock().unwrap()
    }

    fn killed(&self) -> bool {
        self.0.killed.load(Ordering::SeqCst)
    }
}

fn connect(opts: &WorkerOptions) -> Result<TcpStream, WorkerError> {
    let attempts = opts.connect_retries.max(1);
    let mut delay = Duration::from_millis(100);
    let mut last = None;
    for i in 0..attempts {
        match TcpStream::connect(&opts.frontend) {
            Ok(s) => return Ok(s),
            Err(e) => {
                tracing::debug!("connect attempt {} failed: {e}", i + 1);
                last = Some(e);
            }
        }
        if i + 1 < attempts {
            thread::sleep(delay);
            delay = (delay * 2).min(Duration::from_secs(2));
        }
    }
    Err(WorkerError::Connect {
        addr: opts.frontend.clone(),
        attempts,
        source: last.expect("at least one attempt"),
    })
}

enum SessionEnd {
    Exit(WorkerExit),
    Reconnect,
}

/// Runs until the front-end says `shutdown`, the worker is killed, or the
/// front-end becomes unreachable.
pub fn run_worker(catalog: &ReadOnlyCatalog, opts: &WorkerOptions, control: &WorkerControl) -> Result<WorkerExit, WorkerError> {
    let mut completed = 0u64;
    loop {
        if control.killed() {
            return Ok(WorkerExit::Killed);
        }
        match session(catalog, opts, control, &mut completed)? {
            SessionEnd::Exit(e) => return Ok(e),
            SessionEnd::Reconnect => continue,
        }
    }
}

fn session(
    catalog: &ReadOnlyCatalog,
    opts: &WorkerOptions,
    control: &WorkerControl,
    completed: &mut u64,
) -> Result<SessionEnd, WorkerError> {
    let stream = connect(opts)?;
    let _ = stream.set_nodelay(true);
    *control.0.stream.lock().unwrap() = stream.try_clone().ok();
    if control.killed() {
        let _ = stream.shutdown(Shutdown::Both);
        return Ok(SessionEnd::Exit(WorkerExit::Killed));
    }
    let writer = Arc::new(Mutex::new(BufWriter::new(stream.try_clone().map_err(ProtocolError::Io)?)));
    let mut reader = BufReader::new(stream);
    let send = |m: &Message| -> std::io::Result<()> {
        let mut w = writer.lock().unwrap();
        w.write_all(&m.encode())?;
        w.flush()
    };

    send(&Message::Register(Register { address: opts.label.clone() })).map_err(ProtocolError::Io)?;
    let (worker_id, interval) = match read_message(&mut reader)? {
        Some(Message::Registered(r)) => (r.worker_id, Duration::from_millis(r.heartbeat_interval_ms.max(1))),
        Some(Message::Error(e)) => return Err(WorkerError::Rejected(e.message)),
        Some(other) => return Err(ProtocolError::Malformed(format!("expected registered, got {}", other.kind())).into()),
        None => return Ok(SessionEnd::Reconnect),
    };
    *control.0.worker_id.lock().unwrap() = Some(worker_id);
    tracing::info!(worker_id, "registered");

    let stop = Arc::new(AtomicBool::new(false));
    let beat = {
        let stop = stop.clone();
        let writer = writer.clone();
        let control = control.clone();
        thread::spawn(move || {
            let hb = Message::Heartbeat(Heartbeat { worker_id }).encode();
            let mut next = Instant::now();
            while !stop.load(Ordering::SeqCst) {
                if Instant::now() >= next {
                    if !control.0.heartbeats_paused.load(Ordering::SeqCst) {
                        let mut w = writer.lock().unwrap();
                        if w.write_all(&hb).and_then(|_| w.flush()).is_err() {
                            break;
                        }
                    }
                    next += interval;
                }
                thread::sleep(Duration::from_millis(10).min(interval));
            }
        })
    };

    let end = loop {
        let msg = match read_message(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) | Err(ProtocolError::Io(_)) => {
                break if control.killed() { SessionEnd::Exit(WorkerExit::Killed) } else { SessionEnd::Reconnect };
            }
            Err(e) => {
                stop.store(true, Ordering::SeqCst);
                let _ = beat.join();
                return Err(e.into());
            }
        };
        match msg {
            Message::Task(t) => {
                if opts.die_after_chunks.is_some_and(|n| *completed >= n) {
                    control.kill();
                    break SessionEnd::Exit(WorkerExit::Killed);
                }
                let c = t.chunk;
                let started = Instant::now();
                let reply = match execute(catalog, &c.experiment, &c.window, c.kind, &c.params) {
                    Ok((payload, count)) => Message::Result(ChunkResult {
                        task_id: c.task_id,
                        chunk_index: c.chunk_index,
                        worker_id,
                        count,
                        elapsed_ms: started.elapsed().as_secs_f64() * 1000.0,
                        payload: serde_json::value::RawValue::from_string(payload).expect("valid json"),
                    }),
                    Err(e) => Message::Error(ErrorMsg {
                        task_id: Some(c.task_id),
                        chunk_index: Some(c.chunk_index),
                        code: protocol::CODE_STORE.into(),
                        message: e.to_string(),
                    }),
                };
                if send(&reply).is_err() {
                    break SessionEnd::Reconnect;
                }
                *completed += 1;
            }
            Message::Error(e) if e.code == protocol::CODE_DEAD => {
                tracing::warn!(worker_id, "front-end declared this worker dead; re-registering");
                break SessionEnd::Reconnect;
            }
            Message::Shutdown => break SessionEnd::Exit(WorkerExit::Shutdown),
            other => tracing::warn!(worker_id, "ignoring {} message", other.kind()),
        }
    };
    stop.store(true, Ordering::SeqCst);
    if let Ok(w) = writer.lock() {
        let _ = w.get_ref().shutdown(Shutdown::Both);
    }
    let _ = beat.join();
    Ok(end)
}

/// Starts a worker on a background thread; used by tests and the benchmark.
pub fn spawn_thread_worker(
    catalog: Arc<ReadOnlyCatalog>,
    opts: WorkerOptions,
) -> (WorkerControl, thread::JoinHandle<Result<WorkerExit, WorkerError>>) {
    let control = WorkerControl::default();
    let c = control.clone();
    let h = thread::spawn(move || run_worker(&catalog, &opts, &c));
    (control, h)
}
