//! Multi-threaded front for the indexed matcher.

use std::thread;

use atmoscope_core::matcher::TimeIndex;
use atmoscope_core::{MatchPair, MatchParams, ObservationRecord};

/// Matches every record of `a` against `b`, splitting `a` into `threads`
/// contiguous slices. Output is aligned with `a` and independent of the
/// thread count.
pub fn match_indexed(
    a: &[ObservationRecord],
    b: &[ObservationRecord],
    p: &MatchParams,
    threads: usize,
) -> Vec<Option<MatchPair>> {
    let threads = threads.max(1);
    let index = TimeIndex::new(b);
    let mut out = vec![None; a.len()];
    if threads == 1 || a.len() < 2 * threads {
        index.match_into(a, p, &mut out);
        return out;
    }
    let per = a.len().div_ceil(threads);
    thread::scope(|s| {
        for (a_part, out_part) in a.chunks(per).zip(out.chunks_mut(per)) {
            let index = &index;
            s.spawn(move || index.match_into(a_part, p, out_part));
        }
    });
    out
}
