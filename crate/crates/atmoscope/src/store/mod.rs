//! Embedded geotemporal document store.
//!
//! Records are grouped into immutable per-(experiment, day) segments under
//! `<root>/segments/<experiment>/<YYYY-MM-DD>.seg` and indexed by a single
//! canonical-JSON manifest at `<root>/manifest.json`. Each manifest entry
//! carries the segment's time span and 5° grid histogram so queries can skip
//! segments without decompressing them.
//!
//! At most one read-write [`Catalog`] may be open per root (advisory lock on
//! `<root>/.lock`); any number of read-only ones may coexist with it.
//! The serving tier only ever sees a [`ReadOnlyCatalog`].

mod manifest;
pub mod segment;

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use atmoscope_core::grid::GridHistogram;
use atmoscope_core::time::day_of;
use atmoscope_core::{Date, ExperimentId, ObservationRecord, QueryWindow, Timestamp};

pub use manifest::{Manifest, SegmentInfo};
use segment::SegmentHeader;

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogMode {
    ReadWrite,
    ReadOnly,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("catalog root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("corrupt manifest {path}: {reason}")]
    CorruptManifest { path: PathBuf, reason: String },
    #[error("checksum mismatch in segment file(s): {}", display_paths(.files))]
    Checksum { files: Vec<PathBuf> },
    #[error("segment file(s) referenced by the manifest are missing: {}", display_paths(.files))]
    MissingSegments { files: Vec<PathBuf> },
    #[error("corrupt segment {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("catalog is read-only")]
    ReadOnly,
    #[error("catalog {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("refusing to publish an empty segment")]
    EmptySegment,
    #[error("record {record_id} belongs to {actual}, not {expected}")]
    DayMismatch { record_id: u64, expected: Date, actual: Date },
    #[error("record {record_id} has experiment {actual}, not {expected}")]
    ExperimentMismatch { record_id: u64, expected: ExperimentId, actual: ExperimentId },
    #[error("duplicate record_id {0}")]
    DuplicateRecordId(u64),
    #[error("invalid record {record_id}: {reason}")]
    InvalidRecord { record_id: u64, reason: String },
    #[error("segment {experiment}/{day} already exists (use replace)")]
    Conflict { experiment: ExperimentId, day: Date },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn display_paths(p: &[PathBuf]) -> String {
    p.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io { path: path.to_path_buf(), source }
    }
}

/// Per-experiment totals, from the manifest alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentStats {
    pub experiment: ExperimentId,
    pub record_count: u64,
    pub segment_count: u64,
    pub time_min: Timestamp,
    pub time_max: Timestamp,
    pub first_day: Date,
    pub last_day: Date,
}

/// Segments a query would read and the ones it skips.
#[derive(Debug, Clone, Default)]
pub struct QueryPlan {
    pub selected: Vec<SegmentInfo>,
    pub pruned: Vec<SegmentInfo>,
}

#[derive(Debug)]
pub struct Catalog {
    root: PathBuf,
    mode: CatalogMode,
    manifest: Manifest,
    _lock: Option<File>,
    segments_opened: AtomicU64,
}

impl Catalog {
    pub fn open(root: impl AsRef<Path>, mode: CatalogMode) -> Result<Catalog, StoreError> {
        let root = root.as_ref().to_path_buf();
        let lock = match mode {
            CatalogMode::ReadOnly => {
                if !root.is_dir() {
                    return Err(StoreError::MissingRoot(root));
                }
                None
            }
            CatalogMode::ReadWrite => {
                fs::create_dir_all(&root).map_err(|e| StoreError::io(&root, e))?;
                let lock_path = root.join(LOCK_FILE);
                let f = OpenOptions::new()
                    .create(true)
                    .truncate(false)
                    .write(true)
                    .open(&lock_path)
                    .map_err(|e| StoreError::io(&lock_path, e))?;
                if f.try_lock().is_err() {
                    return Err(StoreError::Locked(root));
                }
                Some(f)
            }
        };
        let manifest = Manifest::load(&root)?;
        validate_segments(&root, &manifest)?;
        Ok(Catalog {
            root,
            mode,
            manifest,
            _lock: lock,
            segments_opened: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn mode(&self) -> CatalogMode {
        self.mode
    }

    pub fn segments(&self) -> &[SegmentInfo] {
        &self.manifest.segments
    }

    /// Number of segment files decoded since the catalog was opened.
    pub fn segments_opened(&self) -> u64 {
        self.segments_opened.load(Ordering::Relaxed)
    }

    /// Validates, sorts and persists one day of records, then updates the
    /// manifest atomically (temp file + rename).
    pub fn publish_segment(
        &mut self,
        experiment: &ExperimentId,
        day: Date,
        records: Vec<ObservationRecord>,
        replace: bool,
    ) -> Result<SegmentInfo, StoreError> {
        let staged = self.stage_segment(experiment, day, records, replace)?;
        self.commit(staged)
    }

    /// Writes the segment file without touching the manifest. Used by
    /// `publish_segment`; exposed so crash-safety tests can stop between the
    /// two steps.
    #[doc(hidden)]
    pub fn stage_segment(
        &self,
        experiment: &ExperimentId,
        day: Date,
        mut records: Vec<ObservationRecord>,
        replace: bool,
    ) -> Result<SegmentInfo, StoreError> {
        if self.mode == CatalogMode::ReadOnly {
            return Err(StoreError::ReadOnly);
        }
        if records.is_empty() {
            return Err(StoreError::EmptySegment);
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if &r.experiment != experiment {
                return Err(StoreError::ExperimentMismatch {
                    record_id: r.record_id,
                    expected: experiment.clone(),
                    actual: r.experiment.clone(),
                });
            }
            let actual = day_of(r.time);
            if actual != day {
                return Err(StoreError::DayMismatch { record_id: r.record_id, expected: day, actual });
            }
            r.validate().map_err(|e| StoreError::InvalidRecord {
                record_id: r.record_id,
                reason: e.to_string(),
            })?;
            if !seen.insert(r.record_id) {
                return Err(StoreError::DuplicateRecordId(r.record_id));
            }
        }
        if !replace && self.manifest.find(experiment, day).is_some() {
            return Err(StoreError::Conflict { experiment: experiment.clone(), day });
        }
        records.sort_by_key(|r| r.sort_key());

        let header = SegmentHeader {
            experiment: experiment.clone(),
            day,
            record_count: records.len() as u64,
        };
        let encoded = segment::encode(&header, &records);
        // a replacement must not overwrite the file the current manifest
        // points at, so it gets a content-derived name
        let name = match self.manifest.find(experiment, day) {
            Some(_) => format!("{day}-{:08x}.seg", encoded.crc32),
            None => format!("{day}.seg"),
        };
        let rel = PathBuf::from("segments").join(experiment.as_str()).join(name);
        let path = self.root.join(&rel);
        let dir = path.parent().expect("segment path has a parent");
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        write_atomically(&path, &encoded.bytes)?;

        let histogram: GridHistogram = records.iter().map(|r| r.geo).collect();
        Ok(SegmentInfo {
            experiment: experiment.clone(),
            day,
            path: rel,
            record_count: records.len() as u64,
            time_min: records.first().expect("non-empty").time,
            time_max: records.last().expect("non-empty").time,
            grid_histogram: histogram,
            crc32: encoded.crc32,
            compressed_bytes: encoded.compressed_bytes,
        })
    }

    fn commit(&mut self, info: SegmentInfo) -> Result<SegmentInfo, StoreError> {
        let superseded = self.manifest.find(&info.experiment, info.day).map(|s| s.path.clone()).filter(|p| *p != info.path);
        let mut next = self.manifest.clone();
        next.upsert(info.clone());
        next.save(&self.root)?;
        self.manifest = next;
        if let Some(old) = superseded {
            // best effort: a leftover file is never referenced again
            let _ = fs::remove_file(self.root.join(old));
        }
        Ok(info)
    }

    pub fn plan(&self, experiment: &ExperimentId, window: &QueryWindow) -> QueryPlan {
        let mut plan = QueryPlan::default();
        for s in self.manifest.segments.iter().filter(|s| &s.experiment == experiment) {
            let time_ok = window.overlaps_closed(s.time_min, s.time_max);
            let space_ok = window.bbox().is_none_or(|b| s.grid_histogram.intersects(b));
            if time_ok && space_ok {
                plan.selected.push(s.clone());
            } else {
                plan.pruned.push(s.clone());
            }
        }
        plan
    }

    /// All records of one segment, in storage order.
    pub fn read_segment(&self, info: &SegmentInfo) -> Result<Vec<ObservationRecord>, StoreError> {
        self.segments_opened.fetch_add(1, Ordering::Relaxed);
        let (_, records) = segment::read(&self.root.join(&info.path), info.crc32, &info.experiment)?;
        Ok(records)
    }

    /// Records of `experiment` matching `window`, ordered by (time, record_id).
    /// Unknown experiments yield an empty result.
    pub fn query(&self, experiment: &ExperimentId, window: &QueryWindow) -> Result<Vec<ObservationRecord>, StoreError> {
        let mut out = Vec::new();
        // manifest segments are sorted by (experiment, day), so days arrive in
        // time order and never overlap
        for info in self.plan(experiment, window).selected {
            out.extend(
                self.read_segment(&info)?
                    .into_iter()
                    .filter(|r| window.matches(r.time, r.geo)),
            );
        }
        Ok(out)
    }

    /// `(day, record_count)` for segments in the inclusive range.
    pub fn list_days(&self, experiment: &ExperimentId, from: Option<Date>, to: Option<Date>) -> Vec<(Date, u64)> {
        self.manifest
            .segments
            .iter()
            .filter(|s| &s.experiment == experiment)
            .filter(|s| from.is_none_or(|f| s.day >= f) && to.is_none_or(|t| s.day <= t))
            .map(|s| (s.day, s.record_count))
            .collect()
    }

    pub fn day_counts(&self, experiment: &ExperimentId) -> BTreeMap<Date, u64> {
        self.list_days(experiment, None, None).into_iter().collect()
    }

    pub fn stats(&self, experiment: &ExperimentId) -> Option<ExperimentStats> {
        let segs: Vec<&SegmentInfo> = self.manifest.segments.iter().filter(|s| &s.experiment == experiment).collect();
        let (first, last) = (segs.first()?, segs.last()?);
        Some(ExperimentStats {
            experiment: experiment.clone(),
            record_count: segs.iter().map(|s| s.record_count).sum(),
            segment_count: segs.len() as u64,
            time_min: segs.iter().map(|s| s.time_min).min()?,
            time_max: segs.iter().map(|s| s.time_max).max()?,
            first_day: first.day,
            last_day: last.day,
        })
    }

    pub fn experiments(&self) -> Vec<ExperimentId> {
        let mut v: Vec<ExperimentId> = self.manifest.segments.iter().map(|s| s.experiment.clone()).collect();
        v.dedup();
        v
    }
}

/// Read-only view of a catalog: the only handle the cluster and REST tiers
/// receive. It has no mutating methods at all.
///
/// ```compile_fail
/// # use atmoscope::store::ReadOnlyCatalog;
/// # fn f(cat: &mut ReadOnlyCatalog, e: &atmoscope_core::ExperimentId, d: atmoscope_core::Date) {
/// cat.publish_segment(e, d, Vec::new(), false);
/// # }
/// ```
#[derive(Debug)]
pub struct ReadOnlyCatalog(Catalog);

impl ReadOnlyCatalog {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        Catalog::open(root, CatalogMode::ReadOnly).map(ReadOnlyCatalog)
    }

    pub fn root(&self) -> &Path {
        self.0.root()
    }
    pub fn segments(&self) -> &[SegmentInfo] {
        self.0.segments()
    }
    pub fn segments_opened(&self) -> u64 {
        self.0.segments_opened()
    }
    pub fn plan(&self, experiment: &ExperimentId, window: &QueryWindow) -> QueryPlan {
        self.0.plan(experiment, window)
    }
    pub fn read_segment(&self, info: &SegmentInfo) -> Result<Vec<ObservationRecord>, StoreError> {
        self.0.read_segment(info)
    }
    pub fn query(&self, experiment: &ExperimentId, window: &QueryWindow) -> Result<Vec<ObservationRecord>, StoreError> {
        self.0.query(experiment, window)
    }
    pub fn list_days(&self, experiment: &ExperimentId, from: Option<Date>, to: Option<Date>) -> Vec<(Date, u64)> {
        self.0.list_days(experiment, from, to)
    }
    pub fn day_counts(&self, experiment: &ExperimentId) -> BTreeMap<Date, u64> {
        self.0.day_counts(experiment)
    }
    pub fn stats(&self, experiment: &ExperimentId) -> Option<ExperimentStats> {
        self.0.stats(experiment)
    }
    pub fn experiments(&self) -> Vec<ExperimentId> {
        self.0.experiments()
    }
}

fn validate_segments(root: &Path, manifest: &Manifest) -> Result<(), StoreError> {
    let mut missing = Vec::new();
    let mut bad = Vec::new();
    for s in &manifest.segments {
        let path = root.join(&s.path);
        match segment::checksum_file(&path) {
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => missing.push(path),
            Err(e) => return Err(StoreError::io(&path, e)),
            Ok(Some((crc, len))) if crc == s.crc32 && len == s.compressed_bytes => {}
            Ok(_) => bad.push(path),
        }
    }
    if !missing.is_empty() {
        return Err(StoreError::MissingSegments { files: missing });
    }
    if !bad.is_empty() {
        return Err(StoreError::Checksum { files: bad });
    }
    Ok(())
}

pub(crate) fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| StoreError::io(&tmp, e))?;
    f.sync_all().map_err(|e| StoreError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))
}
