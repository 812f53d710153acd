//! Query windows: a half-open time interval plus an optional, antimeridian-aware
//! bounding box.

use core::fmt;

use crate::geo::GeoPoint;
use crate::time::Timestamp;

/// Closed latitude/longitude box. When `lon_min > lon_max` the box wraps
/// across the antimeridian.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WindowError {
    Inverted,
    BadBBox(&'static str),
}

impl fmt::Display for WindowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowError::Inverted => f.write_str("time_from must not be after time_to"),
            WindowError::BadBBox(why) => write!(f, "invalid bbox: {why}"),
        }
    }
}

impl BBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<BBox, WindowError> {
        let all = [lat_min, lat_max, lon_min, lon_max];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(WindowError::BadBBox("non-finite bound"));
        }
        if lat_min > lat_max {
            return Err(WindowError::BadBBox("lat_min > lat_max"));
        }
        if lat_min < -90.0 || lat_max > 90.0 {
            return Err(WindowError::BadBBox("latitude outside [-90, 90]"));
        }
        if !(-180.0..=180.0).contains(&lon_min) || !(-180.0..=180.0).contains(&lon_max) {
            return Err(WindowError::BadBBox("longitude outside [-180, 180]"));
        }
        Ok(BBox { lat_min, lat_max, lon_min, lon_max })
    }

    pub fn wraps(&self) -> bool {
        self.lon_min > self.lon_max
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        let (lat, lon) = (p.lat(), p.lon());
        if lat < self.lat_min || lat > self.lat_max {
            return false;
        }
        if self.wraps() {
            lon >= self.lon_min || lon <= self.lon_max
        } else {
            lon >= self.lon_min && lon <= self.lon_max
        }
    }

    /// The box as one or two non-wrapping longitude intervals.
    pub fn lon_intervals(&self) -> ([(f64, f64); 2], usize) {
        if self.wraps() {
            ([(self.lon_min, 180.0), (-180.0, self.lon_max)], 2)
        } else {
            ([(self.lon_min, self.lon_max), (0.0, 0.0)], 1)
        }
    }
}

/// `time_from <= t < time_to`, optionally restricted to a bbox.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QueryWindow {
    time_from: Timestamp,
    time_to: Timestamp,
    bbox: Option<BBox>,
}

impl QueryWindow {
    pub fn new(time_from: Timestamp, time_to: Timestamp, bbox: Option<BBox>) -> Result<Self, WindowError> {
        if time_from > time_to {
            return Err(WindowError::Inverted);
        }
        Ok(QueryWindow { time_from, time_to, bbox })
    }

    pub fn time_from(&self) -> Timestamp {
        self.time_from
    }

    pub fn time_to(&self) -> Timestamp {
        self.time_to
    }

    pub fn bbox(&self) -> Option<&BBox> {
        self.bbox.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.time_from == self.time_to
    }

    #[inline]
    pub fn contains_time(&self, t: Timestamp) -> bool {
        self.time_from <= t && t < self.time_to
    }

    #[inline]
    pub fn matches(&self, t: Timestamp, geo: GeoPoint) -> bool {
        self.contains_time(t) && self.bbox.is_none_or(|b| b.contains(geo))
    }

    /// Whether `[lo, hi]` (closed) can contain a time inside the window.
    pub fn overlaps_closed(&self, lo: Timestamp, hi: Timestamp) -> bool {
        lo < self.time_to && hi >= self.time_from
    }

    /// Same window with the time interval clipped to `[from, to)`.
    pub fn clipped(&self, from: Timestamp, to: Timestamp) -> QueryWindow {
        let f = self.time_from.max(from);
        let t = self.time_to.min(to).max(f);
        QueryWindow { time_from: f, time_to: t, bbox: self.bbox }
    }
}
