//! Config-driven experiment harness for [`emmf`].
//!
//! An experiment is a JSON file naming a dataset, a solver configuration and
//! optionally a sweep. Repetition `r` uses seed `solver.seed + r` for both
//! initialization and any outlier or noise injection, so results do not
//! depend on how many threads run the repetitions.

pub mod config;
pub mod error;
pub mod run;

pub use config::{ExperimentConfig, Sweep, SweepParameter};
pub use error::{CliError, Result};
pub use run::{run_bound_curve, run_experiment, run_influence, ExperimentReport, PointSummary, RunRecord};
