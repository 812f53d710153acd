//! Algorithmic core of atmoscope.
//!
//! Everything in this crate is pure and `no_std` (with `alloc`): geotemporal
//! domain types, great-circle distances, UTC calendar arithmetic, cloud-top
//! evaluation, the 5° grid used for segment pruning, space-time matching,
//! the synthetic ground-track generator and the front-end's chunk scheduler
//! and worker state machine. IO, networking and threads live in the
//! `atmoscope` crate.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod cloud;
pub mod geo;
pub mod grid;
pub mod matcher;
pub mod record;
pub mod registry;
pub mod schedule;
pub mod synth;
pub mod time;
pub mod window;

pub use cloud::{CloudCriteria, Comparator};
pub use geo::{haversine_km, GeoPoint, EARTH_RADIUS_KM};
pub use matcher::{MatchPair, MatchParams};
pub use record::{ExperimentId, ObservationRecord, ProfileLevel};
pub use time::{Date, Timestamp};
pub use window::{BBox, QueryWindow};
