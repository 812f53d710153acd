//! Points on a spherical Earth and the great-circle distance between them.

use core::fmt;

/// Mean Earth radius used for every distance in the system.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A validated geographic position.
///
/// Latitude lies in `[-90, 90]`; longitude is always stored normalised into
/// `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeoError {
    NonFinite,
    LatitudeOutOfRange(f64),
}

impl fmt::Display for GeoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeoError::NonFinite => f.write_str("coordinate is not a finite number"),
            GeoError::LatitudeOutOfRange(lat) => {
                write!(f, "latitude {lat} outside [-90, 90]")
            }
        }
    }
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        if !lat_deg.is_finite() || !lon_deg.is_finite() {
            return Err(GeoError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(GeoError::LatitudeOutOfRange(lat_deg));
        }
        Ok(Self {
            lat_deg,
            lon_deg: normalize_lon(lon_deg),
        })
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat_deg
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon_deg
    }
}

/// Wraps a finite longitude into `[-180, 180)`. Values already in range are
/// returned untouched, which makes the function idempotent bit-for-bit.
pub fn normalize_lon(lon_deg: f64) -> f64 {
    if (-180.0..180.0).contains(&lon_deg) {
        return lon_deg;
    }
    let mut r = libm::fmod(lon_deg + 180.0, 360.0);
    if r < 0.0 {
        r += 360.0;
    }
    let wrapped = r - 180.0;
    if wrapped >= 180.0 {
        -180.0
    } else {
        wrapped
    }
}

/// Great-circle distance in kilometres (haversine form).
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat_deg.to_radians(), b.lat_deg.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon_deg - a.lon_deg).to_radians();
    let s1 = libm::sin(dphi / 2.0);
    let s2 = libm::sin(dlambda / 2.0);
    let h = s1 * s1 + libm::cos(phi1) * libm::cos(phi2) * s2 * s2;
    let h = h.clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_KM * libm::asin(libm::sqrt(h))
}
