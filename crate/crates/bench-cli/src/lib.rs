//! Experiment harness around the solver: architecture baselines, parameter
//! sweeps, CSV emission, and a self-contained smoke suite.
//!
//! The binary (`risee`) is a thin shell over this library so integration
//! tests can drive sweeps in-process.

pub mod arch;
pub mod config;
pub mod report;
pub mod runner;
pub mod selftest;

pub use arch::{apply_architecture, Architecture};
pub use config::{parse_config, ConfigError, ExperimentConfig, SweepAxis};
pub use report::{emit_report, render_csv, render_manifest};
pub use runner::{run_sweep, AggregateRow, ResultTable, RunError, SeedOutcome};

/// Decibel-milliwatts to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Watts to decibel-milliwatts.
pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}
