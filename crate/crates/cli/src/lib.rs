//! Experiment harness for `l3dmc-core`: configuration, multi-seed runs,
//! results files and run comparison.

pub mod compare;
pub mod config;
pub mod error;
pub mod results;
pub mod run;

pub use compare::{compare_runs, Comparison, ComparisonRow};
pub use config::{ConfigIssue, DatasetSpec, ExperimentConfig, Overrides};
pub use error::CliError;
pub use results::{ResultsFile, SeedResult, Summary};
pub use run::{run_experiment, ExperimentReport};

/// Environment variable naming the output root when `--out` is absent.
pub const OUT_DIR_ENV: &str = "L3DMC_OUT_DIR";
