//! Front-end/worker query cluster.

pub mod exec;
pub mod frontend;
pub mod protocol;
pub mod supervisor;
pub mod worker;

pub use frontend::{ClusterError, FrontEnd, TaskOutput};
