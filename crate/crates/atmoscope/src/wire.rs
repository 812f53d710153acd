//! JSON shapes shared by segment files, jsonl ingest, the worker protocol and
//! the REST API.
//!
//! Every object is written with keys in lexicographic order so responses are
//! canonical and can be compared byte-for-byte.

use std::collections::BTreeMap;

use atmoscope_core::cloud::evaluate_cloud;
use atmoscope_core::{
    CloudCriteria, ExperimentId, GeoPoint, MatchPair, ObservationRecord, ProfileLevel, Timestamp,
};
use serde::ser::{SerializeSeq, SerializeStruct};
use serde::{Deserialize, Serialize, Serializer};

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Borrowing serializer for one record in the canonical schema:
/// `{"experiment","lat","lon","observables","orbit","profile","record_id","time"}`.
pub struct RecordJson<'a>(pub &'a ObservationRecord);

struct ProfileJson<'a>(&'a [ProfileLevel]);

impl Serialize for ProfileJson<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for l in self.0 {
            seq.serialize_element(&[l.altitude_km, l.value])?;
        }
        seq.end()
    }
}

impl Serialize for RecordJson<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let r = self.0;
        let n = if r.profile.is_some() { 8 } else { 7 };
        let mut st = s.serialize_struct("Record", n)?;
        st.serialize_field("experiment", r.experiment.as_str())?;
        st.serialize_field("lat", &r.geo.lat())?;
        st.serialize_field("lon", &r.geo.lon())?;
        st.serialize_field("observables", &r.observables)?;
        st.serialize_field("orbit", &r.orbit)?;
        if let Some(p) = &r.profile {
            st.serialize_field("profile", &ProfileJson(p))?;
        }
        st.serialize_field("record_id", &r.record_id)?;
        st.serialize_field("time", &r.time.to_iso8601())?;
        st.end()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    #[serde(default)]
    experiment: Option<String>,
    record_id: u64,
    time: String,
    lat: f64,
    lon: f64,
    orbit: u32,
    #[serde(default)]
    observables: BTreeMap<String, f64>,
    #[serde(default)]
    profile: Option<Vec<(f64, f64)>>,
}

impl WireRecord {
    fn into_record(self, default_experiment: Option<&ExperimentId>) -> Result<ObservationRecord, WireError> {
        let experiment = match (self.experiment, default_experiment) {
            (Some(e), Some(d)) if e != d.as_str() => {
                return Err(WireError::Invalid(format!(
                    "record experiment {e:?} differs from expected {:?}",
                    d.as_str()
                )))
            }
            (_, Some(d)) => d.clone(),
            (Some(e), None) => ExperimentId::new(&e).map_err(|e| WireError::Invalid(e.to_string()))?,
            (None, None) => return Err(WireError::Invalid("missing field `experiment`".into())),
        };
        let time = Timestamp::parse_iso8601(&self.time).map_err(|e| WireError::Invalid(e.to_string()))?;
        let geo = GeoPoint::new(self.lat, self.lon).map_err(|e| WireError::Invalid(e.to_string()))?;
        let profile = self.profile.map(|p| {
            p.into_iter()
                .map(|(altitude_km, value)| ProfileLevel { altitude_km, value })
                .collect()
        });
        let rec = ObservationRecord {
            experiment,
            record_id: self.record_id,
            time,
            geo,
            orbit: self.orbit,
            observables: self.observables,
            profile,
        };
        rec.validate().map_err(|e| WireError::Invalid(e.to_string()))?;
        Ok(rec)
    }
}

/// Parses and validates one record object. When `experiment` is given it
/// fills a missing field and must agree with a present one.
pub fn parse_record(json: &str, experiment: Option<&ExperimentId>) -> Result<ObservationRecord, WireError> {
    let wire: WireRecord = serde_json::from_str(json)?;
    wire.into_record(experiment)
}

pub fn parse_record_array(json: &str) -> Result<Vec<ObservationRecord>, WireError> {
    let wire: Vec<WireRecord> = serde_json::from_str(json)?;
    wire.into_iter().map(|w| w.into_record(None)).collect()
}

pub fn record_to_string(r: &ObservationRecord) -> String {
    serde_json::to_string(&RecordJson(r)).expect("records serialize")
}

/// `[rec,rec,...]`
pub fn records_to_json(records: &[ObservationRecord]) -> String {
    let items: Vec<RecordJson<'_>> = records.iter().map(RecordJson).collect();
    serde_json::to_string(&items).expect("records serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudTopPoint {
    pub cloud_top_km: f64,
    pub lat: f64,
    pub lon: f64,
    pub record_id: u64,
    pub time: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitPoint {
    pub lat: f64,
    pub lon: f64,
    pub orbit: u32,
    pub time: String,
}

pub fn cloud_tops(records: &[ObservationRecord], crit: &CloudCriteria) -> Vec<CloudTopPoint> {
    records
        .iter()
        .filter_map(|r| {
            evaluate_cloud(r, crit).map(|top| CloudTopPoint {
                cloud_top_km: top,
                lat: r.geo.lat(),
                lon: r.geo.lon(),
                record_id: r.record_id,
                time: r.time.to_iso8601(),
            })
        })
        .collect()
}

/// Time-ordered ground track with consecutive duplicates removed.
pub fn orbit_track(records: &[ObservationRecord]) -> Vec<OrbitPoint> {
    let mut out: Vec<OrbitPoint> = Vec::with_capacity(records.len());
    for r in records {
        let p = OrbitPoint {
            lat: r.geo.lat(),
            lon: r.geo.lon(),
            orbit: r.orbit,
            time: r.time.to_iso8601(),
        };
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}

/// Match output element; `null` when unmatched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchJson {
    pub a_id: u64,
    pub b_id: u64,
    pub dist_km: f64,
    pub dt_s: f64,
    pub score: f64,
}

impl From<&MatchPair> for MatchJson {
    fn from(m: &MatchPair) -> Self {
        MatchJson {
            a_id: m.a_record_id,
            b_id: m.b_record_id,
            dist_km: m.dist_km,
            dt_s: m.dt_s,
            score: m.score,
        }
    }
}

pub fn matches_to_json(matches: &[Option<MatchPair>]) -> String {
    let items: Vec<Option<MatchJson>> = matches.iter().map(|m| m.as_ref().map(MatchJson::from)).collect();
    serde_json::to_string(&items).expect("matches serialize")
}

/// Concatenates JSON arrays in order: `[a..]`, `[b..]` -> `[a..,b..]`.
pub fn concat_arrays<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::from("[");
    let mut first = true;
    for p in parts {
        let inner = p.trim();
        let inner = inner
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .unwrap_or(inner)
            .trim();
        if inner.is_empty() {
            continue;
        }
        if !first {
            out.push(',');
        }
        out.push_str(inner);
        first = false;
    }
    out.push(']');
    out
}
