//! Front-end bookkeeping of back-end workers.
//!
//! A pure state machine driven by explicit timestamps from the monitor's clock:
//! `STARTING -> READY` on the first heartbeat, `READY <-> BUSY` as chunks are
//! dispatched and finished, and any state `-> DEAD` on disconnect or after
//! missing [`MISSED_HEARTBEAT_LIMIT`] expected heartbeats. Dead workers keep
//! their entry for status reporting but never come back; a worker that
//! returns must register again and gets a fresh id.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::schedule::WorkerLoad;
use crate::time::Timestamp;

pub const MISSED_HEARTBEAT_LIMIT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "SCREAMING_SNAKE_CASE"))]
pub enum WorkerState {
    Starting,
    Ready,
    Busy,
    Dead,
}

impl WorkerState {
    pub fn is_live(self) -> bool {
        matches!(self, WorkerState::Ready | WorkerState::Busy)
    }

    pub fn can_become(self, next: WorkerState) -> bool {
        use WorkerState::*;
        matches!(
            (self, next),
            (Starting, Ready) | (Ready, Busy) | (Busy, Ready) | (Starting | Ready | Busy, Dead)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerInfo {
    pub worker_id: u64,
    pub address: String,
    pub state: WorkerState,
    pub last_heartbeat: Timestamp,
    pub inflight_chunks: u32,
    pub completed_chunks: u64,
    /// Sum of the cost of chunks dispatched and not yet finished.
    pub queued_cost: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegistryError {
    UnknownWorker(u64),
    /// The worker was declared dead and must re-register.
    Dead(u64),
}

impl fmt::Display for RegistryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegistryError::UnknownWorker(id) => write!(f, "unknown worker {id}"),
            RegistryError::Dead(id) => write!(f, "worker {id} is dead; re-register"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkerRegistry {
    workers: BTreeMap<u64, WorkerInfo>,
    next_id: u64,
    heartbeat_interval_ms: u64,
}

impl WorkerRegistry {
    pub fn new(heartbeat_interval_ms: u64) -> Self {
        WorkerRegistry {
            workers: BTreeMap::new(),
            next_id: 1,
            heartbeat_interval_ms,
        }
    }

    pub fn heartbeat_interval_ms(&self) -> u64 {
        self.heartbeat_interval_ms
    }

    pub fn register(&mut self, address: &str, now: Timestamp) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.workers.insert(
            id,
            WorkerInfo {
                worker_id: id,
                address: String::from(address),
                state: WorkerState::Starting,
                last_heartbeat: now,
                inflight_chunks: 0,
                completed_chunks: 0,
                queued_cost: 0,
            },
        );
        id
    }

    fn live_mut(&mut self, id: u64) -> Result<&mut WorkerInfo, RegistryError> {
        match self.workers.get_mut(&id) {
            None => Err(RegistryError::UnknownWorker(id)),
            Some(w) if w.state == WorkerState::Dead => Err(RegistryError::Dead(id)),
            Some(w) => Ok(w),
        }
    }

    pub fn heartbeat(&mut self, id: u64, now: Timestamp) -> Result<(), RegistryError> {
        let w = self.live_mut(id)?;
        w.last_heartbeat = w.last_heartbeat.max(now);
        if w.state == WorkerState::Starting {
            w.state = WorkerState::Ready;
        }
        Ok(())
    }

    pub fn chunk_dispatched(&mut self, id: u64, cost: u64) -> Result<(), RegistryError> {
        let w = self.live_mut(id)?;
        w.inflight_chunks += 1;
        w.queued_cost = w.queued_cost.saturating_add(cost);
        if w.state == WorkerState::Ready {
            w.state = WorkerState::Busy;
        }
        Ok(())
    }

    /// `completed` is false when the worker answered with an error.
    pub fn chunk_finished(&mut self, id: u64, cost: u64, completed: bool) -> Result<(), RegistryError> {
        let w = self.live_mut(id)?;
        w.inflight_chunks = w.inflight_chunks.saturating_sub(1);
        w.queued_cost = w.queued_cost.saturating_sub(cost);
        if completed {
            w.completed_chunks += 1;
        }
        if w.inflight_chunks == 0 && w.state == WorkerState::Busy {
            w.state = WorkerState::Ready;
        }
        Ok(())
    }

    /// Returns `true` if the worker was alive before the call.
    pub fn mark_dead(&mut self, id: u64) -> bool {
        match self.workers.get_mut(&id) {
            Some(w) if w.state != WorkerState::Dead => {
                w.state = WorkerState::Dead;
                w.inflight_chunks = 0;
                w.queued_cost = 0;
                true
            }
            _ => false,
        }
    }

    /// Declares dead every worker silent for more than
    /// `MISSED_HEARTBEAT_LIMIT` intervals; returns the newly dead ids.
    pub fn sweep(&mut self, now: Timestamp) -> Vec<u64> {
        let limit = MISSED_HEARTBEAT_LIMIT * self.heartbeat_interval_ms;
        let stale: Vec<u64> = self
            .workers
            .values()
            .filter(|w| w.state != WorkerState::Dead)
            .filter(|w| now.epoch_ms().saturating_sub(w.last_heartbeat.epoch_ms()) > limit)
            .map(|w| w.worker_id)
            .collect();
        for &id in &stale {
            self.mark_dead(id);
        }
        stale
    }

    pub fn get(&self, id: u64) -> Option<&WorkerInfo> {
        self.workers.get(&id)
    }

    pub fn is_live(&self, id: u64) -> bool {
        self.workers.get(&id).is_some_and(|w| w.state.is_live())
    }

    /// READY/BUSY workers with their queued cost, ordered by id.
    pub fn live_loads(&self) -> Vec<WorkerLoad> {
        self.workers
            .values()
            .filter(|w| w.state.is_live())
            .map(|w| WorkerLoad {
                worker_id: w.worker_id,
                load: w.queued_cost,
            })
            .collect()
    }

    pub fn snapshot(&self) -> Vec<WorkerInfo> {
        self.workers.values().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(s: u64) -> Timestamp {
        Timestamp::from_epoch_ms(s * 1000)
    }

    #[test]
    fn lifecycle() {
        let mut r = WorkerRegistry::new(2000);
        let id = r.register("127.0.0.1:1", at(0));
        assert_eq!(r.get(id).unwrap().state, WorkerState::Starting);
        assert!(r.live_loads().is_empty());
        r.heartbeat(id, at(1)).unwrap();
        assert_eq!(r.get(id).unwrap().state, WorkerState::Ready);
        r.chunk_dispatched(id, 10).unwrap();
        assert_eq!(r.get(id).unwrap().state, WorkerState::Busy);
        assert_eq!(r.live_loads(), vec![WorkerLoad { worker_id: id, load: 10 }]);
        r.chunk_finished(id, 10, true).unwrap();
        let w = r.get(id).unwrap();
        assert_eq!((w.state, w.completed_chunks, w.queued_cost), (WorkerState::Ready, 1, 0));
    }

    #[test]
    fn silent_for_seven_seconds_is_dead() {
        let mut r = WorkerRegistry::new(2000);
        let id = r.register("a", at(0));
        r.heartbeat(id, at(0)).unwrap();
        assert!(r.sweep(at(6)).is_empty());
        assert_eq!(r.sweep(at(7)), vec![id]);
        assert_eq!(r.get(id).unwrap().state, WorkerState::Dead);
    }

    #[test]
    fn heartbeat_after_death_requires_new_id() {
        let mut r = WorkerRegistry::new(2000);
        let id = r.register("a", at(0));
        r.sweep(at(10));
        assert_eq!(r.heartbeat(id, at(11)), Err(RegistryError::Dead(id)));
        let again = r.register("a", at(11));
        assert_ne!(again, id);
        assert_eq!(r.heartbeat(99, at(0)), Err(RegistryError::UnknownWorker(99)));
    }

    #[test]
    fn alternating_heartbeats_keep_both_ready() {
        let mut r = WorkerRegistry::new(2000);
        let a = r.register("a", at(0));
        let b = r.register("b", at(0));
        for s in 1..30 {
            let id = if s % 2 == 0 { a } else { b };
            r.heartbeat(id, at(s)).unwrap();
            assert!(r.sweep(at(s)).is_empty());
        }
        assert!(r.is_live(a) && r.is_live(b));
    }

    #[test]
    fn death_clears_inflight() {
        let mut r = WorkerRegistry::new(2000);
        let id = r.register("a", at(0));
        r.heartbeat(id, at(0)).unwrap();
        r.chunk_dispatched(id, 3).unwrap();
        r.chunk_dispatched(id, 4).unwrap();
        assert!(r.mark_dead(id));
        assert!(!r.mark_dead(id));
        let w = r.get(id).unwrap();
        assert_eq!((w.inflight_chunks, w.queued_cost), (0, 0));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Register,
        Heartbeat(u64, u64),
        Dispatch(u64),
        Finish(u64, bool),
        Kill(u64),
        Sweep(u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            Just(Op::Register),
            (1u64..6, 0u64..20).prop_map(|(a, b)| Op::Heartbeat(a, b)),
            (1u64..6).prop_map(Op::Dispatch),
            (1u64..6, any::<bool>()).prop_map(|(a, b)| Op::Finish(a, b)),
            (1u64..6).prop_map(Op::Kill),
            (0u64..40).prop_map(Op::Sweep),
        ]
    }

    proptest! {
        #[test]
        fn transitions_stay_legal(ops in proptest::collection::vec(op(), 0..80)) {
            let mut r = WorkerRegistry::new(2000);
            let mut clock = 0u64;
            for op in ops {
                let before: BTreeMap<u64, WorkerState> = r.snapshot().into_iter().map(|w| (w.worker_id, w.state)).collect();
                match op {
                    Op::Register => { r.register("x", at(clock)); }
                    Op::Heartbeat(id, dt) => { clock += dt; let _ = r.heartbeat(id, at(clock)); }
                    Op::Dispatch(id) => { let _ = r.chunk_dispatched(id, 1); }
                    Op::Finish(id, ok) => { let _ = r.chunk_finished(id, 1, ok); }
                    Op::Kill(id) => { r.mark_dead(id); }
                    Op::Sweep(dt) => { clock += dt; r.sweep(at(clock)); }
                }
                for w in r.snapshot() {
                    if let Some(&prev) = before.get(&w.worker_id) {
                        prop_assert!(prev == w.state || prev.can_become(w.state), "{:?} -> {:?}", prev, w.state);
                    }
                    if w.state == WorkerState::Dead {
                        prop_assert_eq!(w.inflight_chunks, 0);
                    }
                }
            }
        }
    }
}
