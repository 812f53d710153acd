//! The geotemporal measurement document.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::geo::GeoPoint;
use crate::time::Timestamp;

/// Lowercase experiment token matching `[a-z0-9_]{1,32}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub struct ExperimentId(String);

impl ExperimentId {
    pub fn new(s: &str) -> Result<Self, RecordError> {
        let ok = (1..=32).contains(&s.len())
            && s.bytes().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == b'_');
        if ok {
            Ok(ExperimentId(String::from(s)))
        } else {
            Err(RecordError::BadExperiment(String::from(s)))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ExperimentId {
    type Error = RecordError;
    fn try_from(s: String) -> Result<Self, RecordError> {
        ExperimentId::new(&s)
    }
}

impl From<ExperimentId> for String {
    fn from(e: ExperimentId) -> String {
        e.0
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Observable and parameter names: `[A-Za-z0-9_]{1,64}`.
pub fn is_token(s: &str) -> bool {
    (1..=64).contains(&s.len()) && s.bytes().all(|c| c.is_ascii_alphanumeric() || c == b'_')
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileLevel {
    pub altitude_km: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub experiment: ExperimentId,
    pub record_id: u64,
    pub time: Timestamp,
    pub geo: GeoPoint,
    pub orbit: u32,
    pub observables: BTreeMap<String, f64>,
    pub profile: Option<Vec<ProfileLevel>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordError {
    BadExperiment(String),
    BadObservableName(String),
    NonFiniteObservable(String),
    NonFiniteProfile { index: usize },
    ProfileNotAscending { index: usize },
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordError::BadExperiment(s) => {
                write!(f, "experiment id {s:?} must match [a-z0-9_]{{1,32}}")
            }
            RecordError::BadObservableName(s) => write!(f, "invalid observable name {s:?}"),
            RecordError::NonFiniteObservable(s) => write!(f, "observable {s:?} is not finite"),
            RecordError::NonFiniteProfile { index } => {
                write!(f, "profile level {index} is not finite")
            }
            RecordError::ProfileNotAscending { index } => {
                write!(f, "profile altitude at level {index} does not strictly increase")
            }
        }
    }
}

impl ObservationRecord {
    /// Checks the invariants not already carried by the field types.
    pub fn validate(&self) -> Result<(), RecordError> {
        for (name, v) in &self.observables {
            if !is_token(name) {
                return Err(RecordError::BadObservableName(name.clone()));
            }
            if !v.is_finite() {
                return Err(RecordError::NonFiniteObservable(name.clone()));
            }
        }
        if let Some(profile) = &self.profile {
            for (i, lvl) in profile.iter().enumerate() {
                if !lvl.altitude_km.is_finite() || !lvl.value.is_finite() {
                    return Err(RecordError::NonFiniteProfile { index: i });
                }
                if i > 0 && lvl.altitude_km <= profile[i - 1].altitude_km {
                    return Err(RecordError::ProfileNotAscending { index: i });
                }
            }
        }
        Ok(())
    }

    /// Storage and result order.
    #[inline]
    pub fn sort_key(&self) -> (Timestamp, u64) {
        (self.time, self.record_id)
    }
}
