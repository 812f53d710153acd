//! Spawns local worker processes and restarts the ones that crash.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

pub const DEFAULT_BACKOFF: [Duration; 3] = [Duration::from_secs(1), Duration::from_secs(2), Duration::from_secs(4)];

#[derive(Debug, Clone)]
pub struct SupervisorConfig {
    pub program: PathBuf,
    pub args: Vec<OsString>,
    /// Delay before restart `i` (1-based); its length is the restart budget.
    pub backoff: Vec<Duration>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotStatus {
    pub slot: usize,
    pub pid: Option<u32>,
    pub restarts: u32,
    /// Set once the restart budget is spent.
    pub failed: Option<String>,
}

struct Slot {
    status: Mutex<SlotStatus>,
    child: Mutex<Option<Child>>,
}

pub struct Supervisor {
    slots: Vec<Arc<Slot>>,
    stopping: Arc<AtomicBool>,
    threads: Mutex<Vec<thread::JoinHandle<()>>>,
}

#[derive(Debug, thiserror::Error)]
#[error("at least one worker is required")]
pub struct NoWorkersRequested;

fn sleep_unless(stopping: &AtomicBool, d: Duration) {
    let end = Instant::now() + d;
    while Instant::now() < end && !stopping.load(Ordering::SeqCst) {
        thread::sleep(Duration::from_millis(20));
    }
}

fn supervise(slot: Arc<Slot>, cfg: SupervisorConfig, stopping: Arc<AtomicBool>) {
    let mut restarts = 0u32;
    loop {
        if stopping.load(Ordering::SeqCst) {
            return;
        }
        let spawned = Command::new(&cfg.program).args(&cfg.args).stdin(Stdio::null()).spawn();
        let why = match spawned {
            Ok(child) => {
                let pid = child.id();
                slot.status.lock().unwrap().pid = Some(pid);
                *slot.child.lock().unwrap() = Some(child);
                let status = loop {
                    let mut guard = slot.child.lock().unwrap();
                    let Some(c) = guard.as_mut() else { return };
                    match c.try_wait() {
                        Ok(Some(st)) => {
                            *guard = None;
                            break Ok(st);
                        }
                        Ok(None) => {}
                        Err(e) => break Err(e),
                    }
                    drop(guard);
                    thread::sleep(Duration::from_millis(25));
                };
                slot.status.lock().unwrap().pid = None;
                match status {
                    Ok(st) if st.success() => return,
                    Ok(st) => format!("worker pid {pid} exited: {st}"),
                    Err(e) => format!("worker pid {pid}: {e}"),
                }
            }
            Err(e) => format!("spawn {}: {e}", cfg.program.display()),
        };
        if stopping.load(Ordering::SeqCst) {
            return;
        }
        let Some(&delay) = cfg.backoff.get(restarts as usize) else {
            tracing::error!("{why}; giving up after {restarts} restarts");
            slot.status.lock().unwrap().failed = Some(why);
            return;
        };
        restarts += 1;
        slot.status.lock().unwrap().restarts = restarts;
        tracing::warn!("{why}; restart {restarts} in {delay:?}");
        sleep_unless(&stopping, delay);
    }
}

impl Supervisor {
    pub fn spawn(n: usize, cfg: SupervisorConfig) -> Result<Supervisor, NoWorkersRequested> {
        if n == 0 {
            return Err(NoWorkersRequested);
        }
        let stopping = Arc::new(AtomicBool::new(false));
        let mut slots = Vec::new();
        let mut threads = Vec::new();
        for i in 0..n {
            let slot = Arc::new(Slot {
                status: Mutex::new(SlotStatus { slot: i, ..SlotStatus::default() }),
                child: Mutex::new(None),
            });
            let (s, c, st) = (slot.clone(), cfg.clone(), stopping.clone());
            threads.push(thread::spawn(move || supervise(s, c, st)));
            slots.push(slot);
        }
        Ok(Supervisor { slots, stopping, threads: Mutex::new(threads) })
    }

    pub fn status(&self) -> Vec<SlotStatus> {
        self.slots.iter().map(|s| s.status.lock().unwrap().clone()).collect()
    }

    /// SIGKILLs the current process of `slot`, if any (for fault tests).
    pub fn kill_slot(&self, slot: usize) -> bool {
        let mut guard = self.slots[slot].child.lock().unwrap();
        guard.as_mut().is_some_and(|c| c.kill().is_ok())
    }

    /// Stops restarting, waits up to `grace` for workers to exit on their
    /// own, then kills the rest.
    pub fn stop(&self, grace: Duration) {
        self.stopping.store(true, Ordering::SeqCst);
        let deadline = Instant::now() + grace;
        while Instant::now() < deadline && self.slots.iter().any(|s| s.child.lock().unwrap().is_some()) {
            thread::sleep(Duration::from_millis(25));
        }
        for s in &self.slots {
            if let Some(mut c) = s.child.lock().unwrap().take() {
                let _ = c.kill();
                let _ = c.wait();
            }
        }
        for t in self.threads.lock().unwrap().drain(..) {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_workers_is_an_error() {
        let cfg = SupervisorConfig { program: "true".into(), args: vec![], backoff: vec![] };
        assert!(Supervisor::spawn(0, cfg).is_err());
    }

    #[test]
    fn crashing_child_is_restarted_until_the_budget_is_spent() {
        let cfg = SupervisorConfig {
            program: "sh".into(),
            args: vec!["-c".into(), "exit 3".into()],
            backoff: vec![Duration::from_millis(10), Duration::from_millis(20), Duration::from_millis(40)],
        };
        let sup = Supervisor::spawn(1, cfg).unwrap();
        let deadline = Instant::now() + Duration::from_secs(10);
        while sup.status()[0].failed.is_none() && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(20));
        }
        let st = &sup.status()[0];
        assert_eq!(st.restarts, 3);
        assert!(st.failed.as_deref().unwrap().contains("exit status: 3"), "{st:?}");
        sup.stop(Duration::ZERO);
    }

    #[test]
    fn clean_exit_is_not_restarted() {
        let cfg = SupervisorConfig { program: "true".into(), args: vec![], backoff: DEFAULT_BACKOFF.to_vec() };
        let sup = Supervisor::spawn(2, cfg).unwrap();
        thread::sleep(Duration::from_millis(300));
        assert!(sup.status().iter().all(|s| s.restarts == 0 && s.failed.is_none() && s.pid.is_none()));
        sup.stop(Duration::ZERO);
    }
}
