use std::path::{Path, PathBuf};

use atmoscope_core::grid::GridHistogram;
use atmoscope_core::{Date, ExperimentId, Timestamp};
use serde_json::{json, Map, Value};

use super::{write_atomically, StoreError, MANIFEST_FILE};

const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentInfo {
    pub experiment: ExperimentId,
    pub day: Date,
    /// Relative to the catalog root.
    pub path: PathBuf,
    pub record_count: u64,
    pub time_min: Timestamp,
    pub time_max: Timestamp,
    pub grid_histogram: GridHistogram,
    /// CRC-32 (IEEE) of the gzip payload following the header.
    pub crc32: u32,
    pub compressed_bytes: u64,
}

/// Segment list kept sorted by (experiment, day).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub segments: Vec<SegmentInfo>,
}

impl Manifest {
    pub fn find(&self, experiment: &ExperimentId, day: Date) -> Option<&SegmentInfo> {
        self.segments.iter().find(|s| &s.experiment == experiment && s.day == day)
    }

    pub fn upsert(&mut self, info: SegmentInfo) {
        self.segments.retain(|s| !(s.experiment == info.experiment && s.day == info.day));
        self.segments.push(info);
        self.segments.sort_by(|a, b| (&a.experiment, a.day).cmp(&(&b.experiment, b.day)));
    }

    pub fn to_json(&self) -> Value {
        let segments: Vec<Value> = self
            .segments
            .iter()
            .map(|s| {
                let hist: Map<String, Value> = s.grid_histogram.iter().map(|(c, n)| (c.to_string(), json!(n))).collect();
                json!({
                    "experiment": s.experiment.as_str(),
                    "day": s.day.to_string(),
                    "path": s.path.to_string_lossy().replace('\\', "/"),
                    "record_count": s.record_count,
                    "time_min": s.time_min.to_iso8601(),
                    "time_max": s.time_max.to_iso8601(),
                    "grid_histogram": hist,
                    "crc32": s.crc32,
                    "compressed_bytes": s.compressed_bytes,
                })
            })
            .collect();
        json!({ "format_version": FORMAT_VERSION, "segments": segments })
    }

    /// Pretty-printed with sorted keys, trailing newline.
    pub fn to_canonical_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("json");
        s.push('\n');
        s
    }

    pub fn from_json(v: &Value) -> Result<Manifest, String> {
        let version = v.get("format_version").and_then(Value::as_u64).ok_or("missing format_version")?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format_version {version}"));
        }
        let list = v.get("segments").and_then(Value::as_array).ok_or("missing segments")?;
        let mut m = Manifest::default();
        for (i, s) in list.iter().enumerate() {
            let info = parse_segment(s).map_err(|e| format!("segment {i}: {e}"))?;
            if m.find(&info.experiment, info.day).is_some() {
                return Err(format!("duplicate segment {}/{}", info.experiment, info.day));
            }
            m.segments.push(info);
        }
        m.segments.sort_by(|a, b| (&a.experiment, a.day).cmp(&(&b.experiment, b.day)));
        Ok(m)
    }

    pub fn load(root: &Path) -> Result<Manifest, StoreError> {
        let path = root.join(MANIFEST_FILE);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Manifest::default()),
            Err(e) => return Err(StoreError::io(&path, e)),
        };
        let corrupt = |reason: String| StoreError::CorruptManifest { path: path.clone(), reason };
        let v: Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        Manifest::from_json(&v).map_err(corrupt)
    }

    pub fn save(&self, root: &Path) -> Result<(), StoreError> {
        write_atomically(&root.join(MANIFEST_FILE), self.to_canonical_string().as_bytes())
    }
}

fn parse_segment(v: &Value) -> Result<SegmentInfo, String> {
    let s = |k: &str| v.get(k).and_then(Value::as_str).ok_or(format!("missing {k}"));
    let u = |k: &str| v.get(k).and_then(Value::as_u64).ok_or(format!("missing {k}"));
    let ts = |k: &str| s(k).and_then(|t| Timestamp::parse_iso8601(t).map_err(|e| e.to_string()));
    let mut grid_histogram = GridHistogram::new();
    let hist = v.get("grid_histogram").and_then(Value::as_object).ok_or("missing grid_histogram")?;
    for (cell, n) in hist {
        let cell: u16 = cell.parse().map_err(|_| format!("bad cell id {cell}"))?;
        let n = n.as_u64().ok_or("bad cell count")?;
        if !grid_histogram.insert(cell, n) {
            return Err(format!("cell id {cell} out of range"));
        }
    }
    let path = PathBuf::from(s("path")?);
    if path.is_absolute() || path.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err("segment path escapes the catalog root".into());
    }
    let info = SegmentInfo {
        experiment: ExperimentId::new(s("experiment")?).map_err(|e| e.to_string())?,
        day: Date::parse(s("day")?).map_err(|e| e.to_string())?,
        path,
        record_count: u("record_count")?,
        time_min: ts("time_min")?,
        time_max: ts("time_max")?,
        crc32: u32::try_from(u("crc32")?).map_err(|_| "crc32 out of range")?,
        compressed_bytes: u("compressed_bytes")?,
        grid_histogram,
    };
    if info.grid_histogram.total() != info.record_count {
        return Err("grid histogram does not sum to record_count".into());
    }
    Ok(info)
}
