//! IO, networking and tooling around [`atmoscope_core`]: the segment store,
//! record file ingest, the front-end/worker query cluster, the REST API, the
//! threaded matcher and the benchmark harness.

pub mod api;
pub mod bench;
pub mod cluster;
pub mod config;
pub mod ingest;
pub mod matching;
pub mod serve;
pub mod store;
pub mod wire;
