//! Space-time collocation between two experiments.
//!
//! For every record of A independently, the best record of B within both
//! tolerances is chosen by the smallest score
//! `(dt/dt_max)^2 + (dist/dist_max)^2`; ties go to the earlier B time, then
//! the smaller B record id, then the earlier position in B. B records may be
//! reused by several A records.
//!
//! [`match_bruteforce`] is the all-pairs reference. [`TimeIndex`] sorts B by
//! time and only inspects the `±dt_max` slice around each A record; the
//! threaded driver lives in the `atmoscope` crate and partitions A over it.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::geo::haversine_km;
use crate::record::ObservationRecord;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchParams {
    dt_max_s: f64,
    dist_max_km: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchParamsError;

impl fmt::Display for MatchParamsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("dt_max_s and dist_max_km must be finite and strictly positive")
    }
}

impl MatchParams {
    pub fn new(dt_max_s: f64, dist_max_km: f64) -> Result<Self, MatchParamsError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(dt_max_s) && ok(dist_max_km) {
            Ok(MatchParams { dt_max_s, dist_max_km })
        } else {
            Err(MatchParamsError)
        }
    }

    pub fn dt_max_s(&self) -> f64 {
        self.dt_max_s
    }

    pub fn dist_max_km(&self) -> f64 {
        self.dist_max_km
    }

    // Widest millisecond offset that can still pass the dt test.
    fn dt_max_ms_ceil(&self) -> u64 {
        let ms = libm::ceil(self.dt_max_s * 1000.0);
        if ms >= u64::MAX as f64 {
            u64::MAX
        } else {
            ms as u64 + 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub a_record_id: u64,
    pub b_record_id: u64,
    pub dt_s: f64,
    pub dist_km: f64,
    pub score: f64,
}

struct Candidate {
    pair: MatchPair,
    b_time: Timestamp,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        match self.pair.score.partial_cmp(&other.pair.score) {
            Some(Ordering::Less) => true,
            Some(Ordering::Greater) => false,
            _ => (self.b_time, self.pair.b_record_id) < (other.b_time, other.pair.b_record_id),
        }
    }
}

#[inline]
fn evaluate(a: &ObservationRecord, b: &ObservationRecord, p: &MatchParams) -> Option<Candidate> {
    let dt_s = a.time.abs_diff_s(b.time);
    if dt_s > p.dt_max_s {
        return None;
    }
    let dist_km = haversine_km(a.geo, b.geo);
    if dist_km > p.dist_max_km {
        return None;
    }
    let (x, y) = (dt_s / p.dt_max_s, dist_km / p.dist_max_km);
    Some(Candidate {
        pair: MatchPair {
            a_record_id: a.record_id,
            b_record_id: b.record_id,
            dt_s,
            dist_km,
            score: x * x + y * y,
        },
        b_time: b.time,
    })
}

fn keep_best(best: &mut Option<Candidate>, c: Candidate) {
    if best.as_ref().is_none_or(|cur| c.beats(cur)) {
        *best = Some(c);
    }
}

/// All-pairs reference matcher. Output is aligned with `a`.
pub fn match_bruteforce(
    a: &[ObservationRecord],
    b: &[ObservationRecord],
    p: &MatchParams,
) -> Vec<Option<MatchPair>> {
    a.iter()
        .map(|ra| {
            let mut best = None;
            for rb in b {
                if let Some(c) = evaluate(ra, rb, p) {
                    keep_best(&mut best, c);
                }
            }
            best.map(|c| c.pair)
        })
        .collect()
}

/// B sorted by `(time, record_id)`, stable with respect to input order.
pub struct TimeIndex<'a> {
    sorted: Vec<&'a ObservationRecord>,
    times: Vec<u64>,
}

impl<'a> TimeIndex<'a> {
    pub fn new(b: &'a [ObservationRecord]) -> Self {
        let mut sorted: Vec<&ObservationRecord> = b.iter().collect();
        sorted.sort_by_key(|r| r.sort_key());
        let times = sorted.iter().map(|r| r.time.epoch_ms()).collect();
        TimeIndex { sorted, times }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn best_for(&self, a: &ObservationRecord, p: &MatchParams) -> Option<MatchPair> {
        let reach = p.dt_max_ms_ceil();
        let t = a.time.epoch_ms();
        let lo = self.times.partition_point(|&x| x < t.saturating_sub(reach));
        let hi = self.times.partition_point(|&x| x <= t.saturating_add(reach));
        let mut best = None;
        for rb in &self.sorted[lo..hi] {
            if let Some(c) = evaluate(a, rb, p) {
                keep_best(&mut best, c);
            }
        }
        best.map(|c| c.pair)
    }

    /// Fills `out[i]` with the match for `a[i]`.
    pub fn match_into(&self, a: &[ObservationRecord], p: &MatchParams, out: &mut [Option<MatchPair>]) {
        assert_eq!(a.len(), out.len());
        for (ra, slot) in a.iter().zip(out.iter_mut()) {
            *slot = self.best_for(ra, p);
        }
    }
}

/// Single-threaded indexed matcher; same contract as [`match_bruteforce`].
pub fn match_indexed(
    a: &[ObservationRecord],
    b: &[ObservationRecord],
    p: &MatchParams,
) -> Vec<Option<MatchPair>> {
    let index = TimeIndex::new(b);
    let mut out = alloc::vec![None; a.len()];
    index.match_into(a, p, &mut out);
    out
}
