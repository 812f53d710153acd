//! Deterministic synthetic limb-sounder data along a circular sun-synchronous
//! ground track.
//!
//! Every value is derived from a stateless hash of `(seed, day, scan index)`,
//! so any single record can be recomputed without generating its neighbours,
//! and output is identical on every platform (all trigonometry goes through
//! `libm`).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::geo::{normalize_lon, GeoPoint};
use crate::record::{ExperimentId, ObservationRecord, ProfileLevel};
use crate::time::{Date, Timestamp, MS_PER_DAY};

pub const SIDEREAL_DAY_S: f64 = 86_164.1;
pub const PROFILE_LEVELS: usize = 16;
pub const PROFILE_BASE_KM: f64 = 6.0;
pub const MAX_DROPOUT: f64 = 0.3;
/// Observable carrying the profile's cloud index minimum.
pub const CLOUD_INDEX: &str = "ci";

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitModel {
    pub inclination_deg: f64,
    pub period_s: f64,
    pub scan_interval_s: f64,
    pub epoch: Timestamp,
    pub seed: u64,
    /// Drop a seeded fraction in `[0, 0.3]` of each day's scans.
    pub dropout: bool,
}

impl Default for OrbitModel {
    /// Envisat-like: 98.55° inclination, ~100.6 min period, one scan per
    /// 65 s, epoch at 2002-03-01.
    fn default() -> Self {
        OrbitModel {
            inclination_deg: 98.55,
            period_s: 6035.0,
            scan_interval_s: 65.0,
            epoch: Timestamp::from_epoch_ms(1_014_940_800_000),
            seed: 0,
            dropout: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OrbitModelError {
    Period,
    ScanInterval,
    Inclination,
}

impl fmt::Display for OrbitModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrbitModelError::Period => "period_s must be finite and > 0",
            OrbitModelError::ScanInterval => "scan_interval_s must lie in (0, period_s) at millisecond resolution",
            OrbitModelError::Inclination => "inclination_deg must be finite",
        })
    }
}

impl OrbitModel {
    pub fn validate(&self) -> Result<(), OrbitModelError> {
        if !(self.period_s.is_finite() && self.period_s > 0.0) {
            return Err(OrbitModelError::Period);
        }
        if !(self.scan_interval_s.is_finite()
            && self.scan_interval_s >= 0.001
            && self.scan_interval_s < self.period_s)
        {
            return Err(OrbitModelError::ScanInterval);
        }
        if !self.inclination_deg.is_finite() {
            return Err(OrbitModelError::Inclination);
        }
        Ok(())
    }

    fn interval_ms(&self) -> u64 {
        libm::round(self.scan_interval_s * 1000.0) as u64
    }

    /// Number of scan slots in one day before drop-out: scans fall at
    /// `midnight + k * interval` for `k >= 1` while still inside the day.
    pub fn slots_per_day(&self) -> u64 {
        (MS_PER_DAY - 1) / self.interval_ms()
    }

    fn lon0_deg(&self) -> f64 {
        unit(mix(&[self.seed, 0x6c6f_6e30])) * 360.0 - 180.0
    }

    /// Sub-satellite point `t` seconds after the model epoch.
    pub fn ground_track(&self, t_s: f64) -> GeoPoint {
        let inc = self.inclination_deg.to_radians();
        let phase = 2.0 * PI * t_s / self.period_s;
        let (sp, cp) = (libm::sin(phase), libm::cos(phase));
        let lat = libm::asin(libm::sin(inc) * sp).to_degrees();
        let lon = self.lon0_deg() + libm::atan2(libm::cos(inc) * sp, cp).to_degrees()
            - 360.0 * t_s / SIDEREAL_DAY_S;
        GeoPoint::new(lat.clamp(-90.0, 90.0), normalize_lon(lon)).expect("finite ground track")
    }

    pub fn orbit_number(&self, t_s: f64) -> u32 {
        if t_s <= 0.0 {
            0
        } else {
            libm::floor(t_s / self.period_s) as u32
        }
    }

    /// Fraction of this day's scans that are dropped.
    pub fn dropout_fraction(&self, day: Date) -> f64 {
        if !self.dropout {
            return 0.0;
        }
        MAX_DROPOUT * unit(mix(&[self.seed, day_key(day), 0xd20f]))
    }
}

fn day_key(day: Date) -> u64 {
    day.days_since_epoch() as u64
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed_u64, |h, &p| splitmix64(h ^ splitmix64(p)))
}

/// Uniform in `[0, 1)`.
#[inline]
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn profile(model: &OrbitModel, day: Date, scan: u64) -> Vec<ProfileLevel> {
    let h = mix(&[model.seed, day_key(day), scan, 0xc10d]);
    // ~45% of profiles carry a cloud whose top sits on one of the levels
    let cloudy = unit(h) < 0.45;
    let top = (splitmix64(h) % PROFILE_LEVELS as u64) as usize;
    (0..PROFILE_LEVELS)
        .map(|lvl| {
            let u = unit(mix(&[h, lvl as u64]));
            let value = if cloudy && lvl <= top {
                0.3 + 1.5 * u
            } else {
                2.0 + 4.0 * u
            };
            ProfileLevel {
                altitude_km: PROFILE_BASE_KM + lvl as f64,
                value,
            }
        })
        .collect()
}

/// One day of records, strictly increasing in time. Record ids are the scan's
/// epoch milliseconds, which keeps them unique across days.
pub fn generate_day(model: &OrbitModel, experiment: &ExperimentId, day: Date) -> Vec<ObservationRecord> {
    let Some(midnight) = day.start() else {
        return Vec::new();
    };
    let interval = model.interval_ms();
    let drop = model.dropout_fraction(day);
    let epoch_ms = model.epoch.epoch_ms() as f64;
    (1..=model.slots_per_day())
        .filter(|&k| drop == 0.0 || unit(mix(&[model.seed, day_key(day), k, 0xd20e])) >= drop)
        .map(|k| {
            let time = midnight.saturating_add_ms(k * interval);
            let t_s = (time.epoch_ms() as f64 - epoch_ms) / 1000.0;
            let profile = profile(model, day, k);
            let ci = profile.iter().map(|l| l.value).fold(f64::INFINITY, f64::min);
            let mut observables = BTreeMap::new();
            observables.insert(String::from(CLOUD_INDEX), ci);
            ObservationRecord {
                experiment: experiment.clone(),
                record_id: time.epoch_ms(),
                time,
                geo: model.ground_track(t_s),
                orbit: model.orbit_number(t_s),
                observables,
                profile: Some(profile),
            }
        })
        .collect()
}

/// Inclusive day range; one entry per day in calendar order.
pub fn generate_synthetic(
    model: &OrbitModel,
    experiment: &ExperimentId,
    first: Date,
    last: Date,
) -> Vec<(Date, Vec<ObservationRecord>)> {
    first
        .iter_through(last)
        .map(|d| (d, generate_day(model, experiment, d)))
        .collect()
}
