//! The 5°×5° occupancy grid stored per segment and used to skip segments that
//! cannot intersect a query's bbox.
//!
//! 72 longitude columns × 36 latitude rows; `cell_id = col * 36 + row`.

use alloc::collections::BTreeMap;

use crate::geo::GeoPoint;
use crate::window::BBox;

pub const CELL_DEG: f64 = 5.0;
pub const COLS: u16 = 72;
pub const ROWS: u16 = 36;
pub const CELL_COUNT: u16 = COLS * ROWS;

// Cells are widened by this much when tested against a bbox so that floating
// rounding in `cell_id` can never cause an unsound prune.
const EDGE_SLACK_DEG: f64 = 1e-9;

pub fn cell_id(p: GeoPoint) -> u16 {
    let col = libm::floor((p.lon() + 180.0) / CELL_DEG).clamp(0.0, f64::from(COLS - 1)) as u16;
    let row = libm::floor((p.lat() + 90.0) / CELL_DEG).clamp(0.0, f64::from(ROWS - 1)) as u16;
    col * ROWS + row
}

/// `(lat_min, lat_max, lon_min, lon_max)` nominal bounds of a cell.
pub fn cell_bounds(id: u16) -> (f64, f64, f64, f64) {
    let (col, row) = (id / ROWS, id % ROWS);
    let lon0 = f64::from(col) * CELL_DEG - 180.0;
    let lat0 = f64::from(row) * CELL_DEG - 90.0;
    (lat0, lat0 + CELL_DEG, lon0, lon0 + CELL_DEG)
}

pub fn cell_intersects(id: u16, bbox: &BBox) -> bool {
    let (la0, la1, lo0, lo1) = cell_bounds(id);
    let (la0, la1) = (la0 - EDGE_SLACK_DEG, la1 + EDGE_SLACK_DEG);
    let (lo0, lo1) = (lo0 - EDGE_SLACK_DEG, lo1 + EDGE_SLACK_DEG);
    if bbox.lat_max < la0 || bbox.lat_min > la1 {
        return false;
    }
    let (ivs, n) = bbox.lon_intervals();
    ivs[..n].iter().any(|&(a, b)| b >= lo0 && a <= lo1)
}

/// Record counts per occupied cell.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GridHistogram {
    counts: BTreeMap<u16, u64>,
}

impl GridHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, p: GeoPoint) {
        *self.counts.entry(cell_id(p)).or_insert(0) += 1;
    }

    /// Inserts a raw count; zero counts are dropped. Returns `false` for an
    /// out-of-range cell id.
    pub fn insert(&mut self, cell: u16, count: u64) -> bool {
        if cell >= CELL_COUNT {
            return false;
        }
        if count > 0 {
            self.counts.insert(cell, count);
        }
        true
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, u64)> + '_ {
        self.counts.iter().map(|(&c, &n)| (c, n))
    }

    pub fn intersects(&self, bbox: &BBox) -> bool {
        self.counts.keys().any(|&c| cell_intersects(c, bbox))
    }
}

impl FromIterator<GeoPoint> for GridHistogram {
    fn from_iter<I: IntoIterator<Item = GeoPoint>>(iter: I) -> Self {
        let mut h = GridHistogram::new();
        iter.into_iter().for_each(|p| h.add(p));
        h
    }
}
