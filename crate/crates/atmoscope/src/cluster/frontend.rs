//! The scheduling front-end: accepts worker connections, tracks them in a
//! [`WorkerRegistry`], splits queries into per-day chunks and merges the
//! results.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use atmoscope_core::registry::{RegistryError, WorkerInfo, WorkerRegistry};
use atmoscope_core::schedule::{assign, assign_chunks, split_into_chunks, ChunkKind, ChunkParams, TaskChunk};
use atmoscope_core::{Date, ExperimentId, QueryWindow, Timestamp};
use futures::stream::{FuturesUnordered, StreamExt};
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::OwnedReadHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::AbortHandle;

use super::protocol::{self, ChunkResult, ErrorMsg, Message, Registered, Task, MAX_MESSAGE_BYTES};
use crate::store::ReadOnlyCatalog;
use crate::wire::concat_arrays;

/// How many times one chunk may be moved to another worker.
pub const MAX_REASSIGNMENTS: u32 = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("no live workers")]
    NoWorkers,
    #[error("chunk {chunk_index} failed on workers {workers:?}; retries exhausted")]
    RetriesExhausted { chunk_index: u32, workers: Vec<u64> },
    #[error("chunk {chunk_index} ({day}) failed on worker {worker_id}: {code}: {message}")]
    Worker { chunk_index: u32, day: Date, worker_id: u64, code: String, message: String },
}

impl ClusterError {
    pub fn code(&self) -> &'static str {
        match self {
            ClusterError::NoWorkers => "NO_WORKERS",
            ClusterError::RetriesExhausted { .. } => "CHUNK_RETRIES_EXHAUSTED",
            ClusterError::Worker { .. } => "WORKER_ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkTiming {
    pub chunk_index: u32,
    pub day: Date,
    pub worker_id: u64,
    pub count: u64,
    pub elapsed_ms: f64,
    /// Workers the chunk was sent to, in order; the last one answered.
    pub workers: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutput {
    /// Merged JSON array, in chunk order.
    pub payload: String,
    pub count: u64,
    pub chunks: Vec<ChunkTiming>,
}

#[derive(Debug)]
enum Outcome {
    Done(ChunkResult),
    Failed(ErrorMsg),
    Died,
}

struct Pending {
    cost: u64,
    reply: oneshot::Sender<Outcome>,
}

struct Link {
    tx: mpsc::UnboundedSender<Vec<u8>>,
    pending: HashMap<(u64, u32), Pending>,
}

struct State {
    registry: WorkerRegistry,
    links: HashMap<u64, Link>,
}

struct Shared {
    state: Mutex<State>,
    catalog: Arc<ReadOnlyCatalog>,
    next_task: AtomicU64,
    tasks: Mutex<Vec<AbortHandle>>,
    closing: AtomicBool,
}

/// Handle to a running front-end; cheap to clone.
#[derive(Clone)]
pub struct FrontEnd {
    shared: Arc<Shared>,
    addr: SocketAddr,
}

pub fn now() -> Timestamp {
    let ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64);
    Timestamp::from_epoch_ms(ms)
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Closes the link, resolving its pending chunks as lost.
    fn declare_dead(&self, id: u64) {
        let link = {
            let mut st = self.lock();
            st.registry.mark_dead(id);
            st.links.remove(&id)
        };
        if let Some(link) = link {
            if self.closing.load(Ordering::Relaxed) {
                tracing::info!(worker_id = id, "worker disconnected");
            } else {
                tracing::warn!(worker_id = id, "worker declared dead");
            }
            let _ = link.tx.send(
                Message::Error(ErrorMsg {
                    task_id: None,
                    chunk_index: None,
                    code: protocol::CODE_DEAD.into(),
                    message: "worker declared dead; register again".into(),
                })
                .encode(),
            );
            for (_, p) in link.pending {
                let _ = p.reply.send(Outcome::Died);
            }
        }
    }

    fn complete(&self, id: u64, key: (u64, u32), outcome: Outcome) {
        let pending = {
            let mut st = self.lock();
            let State { registry, links } = &mut *st;
            let p = links.get_mut(&id).and_then(|l| l.pending.remove(&key));
            if let Some(p) = &p {
                let _ = registry.chunk_finished(id, p.cost, matches!(outcome, Outcome::Done(_)));
            }
            p
        };
        if let Some(p) = pending {
            let _ = p.reply.send(outcome);
        }
    }

    fn dispatch(&self, worker_id: u64, chunk: &TaskChunk) -> oneshot::Receiver<Outcome> {
        let (tx, rx) = oneshot::channel();
        let mut st = self.lock();
        let State { registry, links } = &mut *st;
        match links.get_mut(&worker_id) {
            Some(link) if registry.is_live(worker_id) => {
                let bytes = Message::Task(Task { chunk: chunk.clone() }).encode();
                if link.tx.send(bytes).is_ok() {
                    let _ = registry.chunk_dispatched(worker_id, chunk.cost);
                    link.pending.insert((chunk.task_id, chunk.chunk_index), Pending { cost: chunk.cost, reply: tx });
                } else {
                    let _ = tx.send(Outcome::Died);
                }
            }
            _ => {
                let _ = tx.send(Outcome::Died);
            }
        }
        rx
    }
}

async fn read_message(r: &mut BufReader<OwnedReadHalf>, buf: &mut Vec<u8>) -> Option<Message> {
    buf.clear();
    let n = r.take(MAX_MESSAGE_BYTES as u64 + 1).read_until(b'\n', buf).await.ok()?;
    if n == 0 || buf.last() != Some(&b'\n') {
        return None;
    }
    buf.pop();
    match Message::decode(buf) {
        Ok(m) => Some(m),
        Err(e) => {
            tracing::warn!("dropping connection: {e}");
            None
        }
    }
}

async fn handle_connection(shared: Arc<Shared>, stream: TcpStream, peer: SocketAddr) {
    let _ = stream.set_nodelay(true);
    let (rd, mut wr) = stream.into_split();
    let mut rd = BufReader::new(rd);
    let mut buf = Vec::new();
    let address = match read_message(&mut rd, &mut buf).await {
        Some(Message::Register(r)) => format!("{} ({})", peer, r.address),
        _ => {
            let msg = Message::Error(ErrorMsg {
                task_id: None,
                chunk_index: None,
                code: protocol::CODE_PROTOCOL.into(),
                message: "expected register".into(),
            });
            let _ = wr.write_all(&msg.encode()).await;
            return;
        }
    };
    let (tx, mut rx) = mpsc::unbounded_channel::<Vec<u8>>();
    let id = {
        let mut st = shared.lock();
        let id = st.registry.register(&address, now());
        let interval = st.registry.heartbeat_interval_ms();
        let _ = tx.send(Message::Registered(Registered { worker_id: id, heartbeat_interval_ms: interval }).encode());
        st.links.insert(id, Link { tx, pending: HashMap::new() });
        id
    };
    tracing::info!(worker_id = id, %address, "worker registered");
    let writer = tokio::spawn(async move {
        while let Some(bytes) = rx.recv().await {
            if wr.write_all(&bytes).await.is_err() {
                break;
            }
        }
        let _ = wr.shutdown().await;
    });

    while let Some(msg) = read_message(&mut rd, &mut buf).await {
        match msg {
            Message::Heartbeat(h) if h.worker_id == id => {
                let res = shared.lock().registry.heartbeat(id, now());
                if let Err(RegistryError::Dead(_) | RegistryError::UnknownWorker(_)) = res {
                    break;
                }
            }
            Message::Result(r) if r.worker_id == id => {
                let key = (r.task_id, r.chunk_index);
                shared.complete(id, key, Outcome::Done(r));
            }
            Message::Error(e) => match (e.task_id, e.chunk_index) {
                (Some(t), Some(c)) => shared.complete(id, (t, c), Outcome::Failed(e)),
                _ => tracing::warn!(worker_id = id, "worker error: {}: {}", e.code, e.message),
            },
            other => {
                tracing::warn!(worker_id = id, "unexpected {} message", other.kind());
                break;
            }
        }
    }
    shared.declare_dead(id);
    // the writer drains the DEAD notice and closes once the sender is gone
    let _ = tokio::time::timeout(Duration::from_secs(1), writer).await;
}

impl FrontEnd {
    /// Binds the worker listener and starts the accept loop and the
    /// heartbeat monitor on the current tokio runtime.
    pub async fn start(catalog: Arc<ReadOnlyCatalog>, listen: SocketAddr, heartbeat: Duration) -> std::io::Result<FrontEnd> {
        let listener = TcpListener::bind(listen).await?;
        let addr = listener.local_addr()?;
        let interval_ms = heartbeat.as_millis().max(1) as u64;
        let shared = Arc::new(Shared {
            state: Mutex::new(State { registry: WorkerRegistry::new(interval_ms), links: HashMap::new() }),
            catalog,
            next_task: AtomicU64::new(1),
            tasks: Mutex::new(Vec::new()),
            closing: AtomicBool::new(false),
        });

        let acc = {
            let shared = shared.clone();
            tokio::spawn(async move {
                loop {
                    match listener.accept().await {
                        Ok((stream, peer)) => {
                            tokio::spawn(handle_connection(shared.clone(), stream, peer));
                        }
                        Err(e) => {
                            tracing::warn!("accept failed: {e}");
                            tokio::time::sleep(Duration::from_millis(50)).await;
                        }
                    }
                }
            })
        };
        let mon = {
            let shared = shared.clone();
            let tick = Duration::from_millis((interval_ms / 4).clamp(10, 500));
            tokio::spawn(async move {
                let mut iv = tokio::time::interval(tick);
                loop {
                    iv.tick().await;
                    let dead = shared.lock().registry.sweep(now());
                    for id in dead {
                        // already DEAD in the registry; this closes the link
                        shared.declare_dead(id);
                    }
                }
            })
        };
        shared.tasks.lock().unwrap().extend([acc.abort_handle(), mon.abort_handle()]);
        Ok(FrontEnd { shared, addr })
    }

    /// Address workers connect to.
    pub fn worker_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn catalog(&self) -> &Arc<ReadOnlyCatalog> {
        &self.shared.catalog
    }

    pub fn status(&self) -> Vec<WorkerInfo> {
        self.shared.lock().registry.snapshot()
    }

    pub fn live_workers(&self) -> usize {
        self.shared.lock().registry.live_loads().len()
    }

    /// Polls until at least `n` workers are READY/BUSY.
    pub async fn wait_for_workers(&self, n: usize, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if self.live_workers() >= n {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    /// Asks every connected worker to exit and stops accepting new ones.
    pub fn shutdown(&self) {
        self.shared.closing.store(true, Ordering::Relaxed);
        for h in self.shared.tasks.lock().unwrap().drain(..) {
            h.abort();
        }
        let st = self.shared.lock();
        for link in st.links.values() {
            let _ = link.tx.send(Message::Shutdown.encode());
        }
    }

    pub async fn run_task(
        &self,
        experiment: &ExperimentId,
        window: &QueryWindow,
        kind: ChunkKind,
        params: ChunkParams,
    ) -> Result<TaskOutput, ClusterError> {
        let task_id = self.shared.next_task.fetch_add(1, Ordering::Relaxed);
        let counts = self.shared.catalog.day_counts(experiment);
        let chunks = split_into_chunks(task_id, experiment, window, kind, &params, &counts);
        if chunks.is_empty() {
            return Ok(TaskOutput { payload: "[]".into(), count: 0, chunks: Vec::new() });
        }
        let loads = self.shared.lock().registry.live_loads();
        let plan = assign_chunks(&chunks, &loads).map_err(|_| ClusterError::NoWorkers)?;

        let mut queues: BTreeMap<u64, VecDeque<u32>> = BTreeMap::new();
        for (&ci, &w) in &plan {
            queues.entry(w).or_default().push_back(ci);
        }
        let n = chunks.len();
        let mut history: Vec<Vec<u64>> = vec![Vec::new(); n];
        let mut moves = vec![0u32; n];
        let mut results: Vec<Option<ChunkResult>> = vec![None; n];
        let mut busy: HashSet<u64> = HashSet::new();
        let mut inflight = FuturesUnordered::new();

        loop {
            for (&w, q) in queues.iter_mut() {
                if busy.contains(&w) {
                    continue;
                }
                if let Some(ci) = q.pop_front() {
                    let rx = self.shared.dispatch(w, &chunks[ci as usize]);
                    busy.insert(w);
                    history[ci as usize].push(w);
                    inflight.push(async move { (w, ci, rx.await.unwrap_or(Outcome::Died)) });
                }
            }
            let Some((w, ci, outcome)) = inflight.next().await else {
                break;
            };
            busy.remove(&w);
            match outcome {
                Outcome::Done(r) => results[ci as usize] = Some(r),
                Outcome::Failed(e) => {
                    return Err(ClusterError::Worker {
                        chunk_index: ci,
                        day: chunks[ci as usize].day,
                        worker_id: w,
                        code: e.code,
                        message: e.message,
                    })
                }
                Outcome::Died => {
                    let mut orphans = vec![ci];
                    orphans.extend(queues.remove(&w).unwrap_or_default());
                    for &o in &orphans {
                        moves[o as usize] += 1;
                        if moves[o as usize] > MAX_REASSIGNMENTS {
                            return Err(ClusterError::RetriesExhausted {
                                chunk_index: o,
                                workers: history[o as usize].clone(),
                            });
                        }
                    }
                    let items: Vec<(u32, u64)> = orphans.iter().map(|&o| (o, chunks[o as usize].cost)).collect();
                    let loads = self.shared.lock().registry.live_loads();
                    let re = assign(&items, &loads).map_err(|_| ClusterError::NoWorkers)?;
                    for (o, w2) in re {
                        let q = queues.entry(w2).or_default();
                        q.push_back(o);
                        q.make_contiguous().sort_unstable();
                    }
                }
            }
        }

        let results: Vec<ChunkResult> = results.into_iter().map(|r| r.expect("every chunk completed")).collect();
        let payload = concat_arrays(results.iter().map(|r| r.payload.get()));
        let count = results.iter().map(|r| r.count).sum();
        let timings = results
            .iter()
            .zip(history)
            .map(|(r, workers)| ChunkTiming {
                chunk_index: r.chunk_index,
                day: chunks[r.chunk_index as usize].day,
                worker_id: r.worker_id,
                count: r.count,
                elapsed_ms: r.elapsed_ms,
                workers,
            })
            .collect();
        Ok(TaskOutput { payload, count, chunks: timings })
    }
}
