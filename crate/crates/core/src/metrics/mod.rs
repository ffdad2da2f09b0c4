//! Metric computation, experiment presets, and report export.

pub mod experiment;
pub mod export;
pub mod overhead;
pub mod run;
pub mod stats;

pub use experiment::{
    bootstrap_bench, compare_run, concurrency_sweep, contention_run, CompareReport, SweepPoint, SweepReport,
};
pub use overhead::{compute_overhead, OverheadRecord};
pub use run::{run_darkhorse, run_system, run_vanilla, RunError, RunRecord};
pub use stats::{summarize, Summary};
