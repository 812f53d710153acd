//! Splitting a query into per-day chunks and distributing them over workers
//! with longest-processing-time-first greedy assignment.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::cloud::CloudCriteria;
use crate::record::ExperimentId;
use crate::time::{day_bounds, day_of, Date};
use crate::window::QueryWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "SCREAMING_SNAKE_CASE"))]
pub enum ChunkKind {
    Records,
    CloudTop,
    Orbit,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "snake_case"))]
pub enum ChunkParams {
    None,
    Cloud(CloudCriteria),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskChunk {
    pub task_id: u64,
    pub chunk_index: u32,
    pub experiment: ExperimentId,
    pub day: Date,
    /// The task window clipped to `day`.
    pub window: QueryWindow,
    pub kind: ChunkKind,
    pub params: ChunkParams,
    /// Estimated cost: the day's record count from the catalog manifest.
    pub cost: u64,
}

/// One chunk per non-empty UTC day that intersects `window`, in day order.
/// `day_counts` maps days to catalog record counts; absent or zero days get
/// no chunk.
pub fn split_into_chunks(
    task_id: u64,
    experiment: &ExperimentId,
    window: &QueryWindow,
    kind: ChunkKind,
    params: &ChunkParams,
    day_counts: &BTreeMap<Date, u64>,
) -> Vec<TaskChunk> {
    if window.is_empty() {
        return Vec::new();
    }
    let first = day_of(window.time_from());
    let last = day_of(window.time_to().saturating_sub_ms(1));
    day_counts
        .range(first..=last)
        .filter(|(_, &n)| n > 0)
        .enumerate()
        .map(|(i, (&day, &cost))| {
            let bounds = day_bounds(day);
            TaskChunk {
                task_id,
                chunk_index: i as u32,
                experiment: experiment.clone(),
                day,
                window: window.clipped(bounds.time_from(), bounds.time_to()),
                kind,
                params: params.clone(),
                cost,
            }
        })
        .collect()
}

/// A schedulable worker and the cost already queued on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerLoad {
    pub worker_id: u64,
    pub load: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleError {
    NoWorkers,
}

impl fmt::Display for ScheduleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("no live workers")
    }
}

/// LPT greedy: items by descending cost (ties: ascending index), each to the
/// worker with the least accumulated load (ties: lowest worker id). Starting
/// loads come from `workers`, so concurrent tasks spread over the cluster.
///
/// Returns `chunk_index -> worker_id`.
pub fn assign(
    items: &[(u32, u64)],
    workers: &[WorkerLoad],
) -> Result<BTreeMap<u32, u64>, ScheduleError> {
    if workers.is_empty() {
        return Err(ScheduleError::NoWorkers);
    }
    let mut order: Vec<(u32, u64)> = items.to_vec();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut loads: Vec<WorkerLoad> = workers.to_vec();
    let mut out = BTreeMap::new();
    for (idx, cost) in order {
        let target = loads
            .iter_mut()
            .min_by_key(|w| (w.load, w.worker_id))
            .expect("non-empty");
        target.load = target.load.saturating_add(cost);
        out.insert(idx, target.worker_id);
    }
    Ok(out)
}

pub fn assign_chunks(
    chunks: &[TaskChunk],
    workers: &[WorkerLoad],
) -> Result<BTreeMap<u32, u64>, ScheduleError> {
    let items: Vec<(u32, u64)> = chunks.iter().map(|c| (c.chunk_index, c.cost)).collect();
    assign(&items, workers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::Timestamp;
    use alloc::vec;
    use proptest::prelude::*;

    fn idle(ids: &[u64]) -> Vec<WorkerLoad> {
        ids.iter().map(|&worker_id| WorkerLoad { worker_id, load: 0 }).collect()
    }

    fn loads(map: &BTreeMap<u32, u64>, costs: &[u64]) -> BTreeMap<u64, u64> {
        let mut out = BTreeMap::new();
        for (&i, &w) in map {
            *out.entry(w).or_insert(0) += costs[i as usize];
        }
        out
    }

    fn d(y: i32, m: u32, day: u32) -> Date {
        Date::new(y, m, day).unwrap()
    }

    fn exp() -> ExperimentId {
        ExperimentId::new("mipas").unwrap()
    }

    #[test]
    fn five_equal_chunks_two_workers() {
        let items: Vec<(u32, u64)> = (0..5).map(|i| (i, 100)).collect();
        let m = assign(&items, &idle(&[1, 2])).unwrap();
        let w1: Vec<u32> = m.iter().filter(|(_, &w)| w == 1).map(|(&i, _)| i).collect();
        assert_eq!(w1, vec![0, 2, 4]);
        assert_eq!(loads(&m, &[100; 5]).into_values().collect::<Vec<_>>(), vec![300, 200]);
    }

    #[test]
    fn lpt_balances_9_5_5_1() {
        let costs = [9, 5, 5, 1];
        let items: Vec<(u32, u64)> = costs.iter().enumerate().map(|(i, &c)| (i as u32, c)).collect();
        let m = assign(&items, &idle(&[1, 2])).unwrap();
        let expected: BTreeMap<u32, u64> = [(0, 1), (1, 2), (2, 2), (3, 1)].into_iter().collect();
        assert_eq!(m, expected);
        assert_eq!(loads(&m, &costs).into_values().collect::<Vec<_>>(), vec![10, 10]);
    }

    #[test]
    fn single_worker_takes_all_and_none_errors() {
        let items = [(0, 3), (1, 1), (2, 2)];
        assert!(assign(&items, &idle(&[7])).unwrap().values().all(|&w| w == 7));
        assert_eq!(assign(&items, &[]), Err(ScheduleError::NoWorkers));
    }

    #[test]
    fn existing_load_steers_new_work() {
        let workers = [WorkerLoad { worker_id: 1, load: 1000 }, WorkerLoad { worker_id: 2, load: 0 }];
        assert_eq!(assign(&[(0, 10)], &workers).unwrap()[&0], 2);
    }

    fn counts(days: &[(Date, u64)]) -> BTreeMap<Date, u64> {
        days.iter().copied().collect()
    }

    #[test]
    fn one_day_window_one_chunk() {
        let c = counts(&[(d(2002, 7, 15), 10)]);
        let chunks = split_into_chunks(1, &exp(), &day_bounds(d(2002, 7, 15)), ChunkKind::Records, &ChunkParams::None, &c);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].window, day_bounds(d(2002, 7, 15)));
        assert_eq!(chunks[0].cost, 10);
    }

    #[test]
    fn empty_day_is_skipped() {
        let days: Vec<Date> = d(2002, 7, 1).iter_through(d(2002, 7, 5)).collect();
        let c = counts(&[(days[0], 5), (days[1], 6), (days[3], 7), (days[4], 8)]);
        let w = QueryWindow::new(days[0].start().unwrap(), days[4].succ().start().unwrap(), None).unwrap();
        let chunks = split_into_chunks(3, &exp(), &w, ChunkKind::Orbit, &ChunkParams::None, &c);
        assert_eq!(chunks.iter().map(|c| c.chunk_index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(chunks.iter().all(|c| c.day != days[2]));
        assert_eq!(chunks.iter().map(|c| c.cost).collect::<Vec<_>>(), vec![5, 6, 7, 8]);
    }

    #[test]
    fn empty_window_no_chunks() {
        let c = counts(&[(d(2002, 7, 15), 10)]);
        let t = d(2002, 7, 15).start().unwrap();
        let w = QueryWindow::new(t, t, None).unwrap();
        assert!(split_into_chunks(1, &exp(), &w, ChunkKind::Records, &ChunkParams::None, &c).is_empty());
    }

    proptest! {
        #[test]
        fn chunks_partition_the_window(from in 0u64..(30 * 86_400_000), len in 0u64..(10 * 86_400_000)) {
            let base = d(2002, 7, 1).start().unwrap().epoch_ms();
            let c: BTreeMap<Date, u64> = d(2002, 7, 1).iter_through(d(2002, 8, 15)).map(|d| (d, 1)).collect();
            let w = QueryWindow::new(Timestamp::from_epoch_ms(base + from), Timestamp::from_epoch_ms(base + from + len), None).unwrap();
            let chunks = split_into_chunks(0, &exp(), &w, ChunkKind::Records, &ChunkParams::None, &c);
            let mut cursor = w.time_from();
            for ch in &chunks {
                prop_assert_eq!(ch.window.time_from(), cursor);
                prop_assert!(ch.window.time_to() > ch.window.time_from());
                prop_assert_eq!(day_of(ch.window.time_from()), ch.day);
                prop_assert_eq!(day_of(ch.window.time_to().saturating_sub_ms(1)), ch.day);
                cursor = ch.window.time_to();
            }
            prop_assert_eq!(cursor, w.time_to());
        }

        #[test]
        fn assign_is_total_and_deterministic(
            costs in proptest::collection::vec(0u64..1000, 0..40),
            n_workers in 1usize..6,
        ) {
            let items: Vec<(u32, u64)> = costs.iter().enumerate().map(|(i, &c)| (i as u32, c)).collect();
            let ws: Vec<u64> = (1..=n_workers as u64).collect();
            let a = assign(&items, &idle(&ws)).unwrap();
            prop_assert_eq!(a.len(), costs.len());
            prop_assert_eq!(&a, &assign(&items, &idle(&ws)).unwrap());
            // greedy list-scheduling bound: makespan <= average + largest item
            let l = loads(&a, &costs);
            let makespan = l.values().copied().max().unwrap_or(0);
            let total: u64 = costs.iter().sum();
            let largest = costs.iter().copied().max().unwrap_or(0);
            prop_assert!(makespan as f64 <= total as f64 / n_workers as f64 + largest as f64);
        }
    }
}
