//! Experiment orchestration: config files, end-to-end runs, sweeps and
//! report aggregation.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod sweep;

pub use config::{ConfigError, ExperimentConfig};
pub use pipeline::{prepare, run, run_in_memory, Prepared, RunResult};
pub use sweep::{sweep, Axis, SweepRow};
