//! Cloud criteria and cloud-top evaluation over a record's vertical profile.

use alloc::string::String;
use core::fmt;

use crate::record::{is_token, ObservationRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Comparator {
    /// value <= threshold
    Le,
    /// value >= threshold
    Ge,
}

impl Comparator {
    pub const ALLOWED: &'static str = "le, ge";

    #[inline]
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Le => value <= threshold,
            Comparator::Ge => value >= threshold,
        }
    }

    pub fn parse(s: &str) -> Option<Comparator> {
        match s {
            "le" | "LE" => Some(Comparator::Le),
            "ge" | "GE" => Some(Comparator::Ge),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Comparator::Le => "le",
            Comparator::Ge => "ge",
        }
    }
}

/// "A level is cloudy when `observable <comparator> threshold` inside
/// `[alt_min_km, alt_max_km]`."
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CloudCriteria {
    observable: String,
    comparator: Comparator,
    threshold: f64,
    alt_min_km: f64,
    alt_max_km: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CriteriaError {
    BadObservable(String),
    NonFinite,
    EmptyWindow,
}

impl fmt::Display for CriteriaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CriteriaError::BadObservable(s) => write!(f, "invalid observable name {s:?}"),
            CriteriaError::NonFinite => f.write_str("threshold and altitudes must be finite"),
            CriteriaError::EmptyWindow => f.write_str("alt_min must not exceed alt_max"),
        }
    }
}

impl CloudCriteria {
    pub fn new(
        observable: &str,
        comparator: Comparator,
        threshold: f64,
        alt_min_km: f64,
        alt_max_km: f64,
    ) -> Result<Self, CriteriaError> {
        if !is_token(observable) {
            return Err(CriteriaError::BadObservable(String::from(observable)));
        }
        if ![threshold, alt_min_km, alt_max_km].iter().all(|v| v.is_finite()) {
            return Err(CriteriaError::NonFinite);
        }
        if alt_min_km > alt_max_km {
            return Err(CriteriaError::EmptyWindow);
        }
        Ok(CloudCriteria {
            observable: String::from(observable),
            comparator,
            threshold,
            alt_min_km,
            alt_max_km,
        })
    }

    pub fn observable(&self) -> &str {
        &self.observable
    }
    pub fn comparator(&self) -> Comparator {
        self.comparator
    }
    pub fn threshold(&self) -> f64 {
        self.threshold
    }
    pub fn alt_min_km(&self) -> f64 {
        self.alt_min_km
    }
    pub fn alt_max_km(&self) -> f64 {
        self.alt_max_km
    }
}

/// Highest profile altitude inside the criteria's window whose value satisfies
/// the comparison, or `None` when no level qualifies or there is no profile.
pub fn evaluate_cloud(rec: &ObservationRecord, crit: &CloudCriteria) -> Option<f64> {
    let profile = rec.profile.as_deref()?;
    profile
        .iter()
        .rev()
        .filter(|l| l.altitude_km >= crit.alt_min_km && l.altitude_km <= crit.alt_max_km)
        .find(|l| crit.comparator.holds(l.value, crit.threshold))
        .map(|l| l.altitude_km)
}
