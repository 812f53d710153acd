#![allow(dead_code)]

pub mod golden;

use std::path::Path;

use atmoscope::store::{Catalog, CatalogMode};
use atmoscope_core::synth::{generate_synthetic, OrbitModel};
use atmoscope_core::{Date, ExperimentId, ObservationRecord};

pub fn exp(s: &str) -> ExperimentId {
    ExperimentId::new(s).unwrap()
}

pub fn day(y: i32, m: u32, d: u32) -> Date {
    Date::new(y, m, d).unwrap()
}

pub fn first_day() -> Date {
    day(2002, 7, 1)
}

/// Generates and publishes `days` days starting 2002-07-01; returns the
/// generated records (all days, in order).
pub fn seed_catalog(root: &Path, experiment: &str, days: u32, model: &OrbitModel) -> Vec<ObservationRecord> {
    let e = exp(experiment);
    let last = Date::from_days_since_epoch(first_day().days_since_epoch() + i64::from(days) - 1);
    let mut cat = Catalog::open(root, CatalogMode::ReadWrite).unwrap();
    let mut all = Vec::new();
    for (d, recs) in generate_synthetic(model, &e, first_day(), last) {
        if recs.is_empty() {
            continue;
        }
        cat.publish_segment(&e, d, recs.clone(), false).unwrap();
        all.extend(recs);
    }
    all
}

pub fn model(seed: u64) -> OrbitModel {
    OrbitModel { seed, ..OrbitModel::default() }
}
