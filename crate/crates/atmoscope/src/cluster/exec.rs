//! What a worker does with one chunk. Also the single-threaded reference the
//! cluster output is compared against.

use atmoscope_core::schedule::{ChunkKind, ChunkParams};
use atmoscope_core::{ExperimentId, QueryWindow};

use crate::store::{ReadOnlyCatalog, StoreError};
use crate::wire::{cloud_tops, orbit_track, records_to_json};

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0:?} chunks need cloud criteria")]
    MissingCriteria(ChunkKind),
}

/// Returns the JSON array and its element count.
pub fn execute(
    catalog: &ReadOnlyCatalog,
    experiment: &ExperimentId,
    window: &QueryWindow,
    kind: ChunkKind,
    params: &ChunkParams,
) -> Result<(String, u64), ExecError> {
    let records = catalog.query(experiment, window)?;
    Ok(match (kind, params) {
        (ChunkKind::Records, _) => (records_to_json(&records), records.len() as u64),
        (ChunkKind::CloudTop, ChunkParams::Cloud(crit)) => {
            let pts = cloud_tops(&records, crit);
            (serde_json::to_string(&pts).expect("points serialize"), pts.len() as u64)
        }
        (ChunkKind::CloudTop, ChunkParams::None) => return Err(ExecError::MissingCriteria(kind)),
        (ChunkKind::Orbit, _) => {
            let pts = orbit_track(&records);
            (serde_json::to_string(&pts).expect("points serialize"), pts.len() as u64)
        }
    })
}
