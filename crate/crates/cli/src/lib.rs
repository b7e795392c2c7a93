//! Library surface of the `lowrank` experiment runner: config parsing and
//! the run/diagnose/fit entry points, shared by the binary and the test
//! suites.

pub mod config;
pub mod runner;

pub use config::{ExperimentConfig, InitKind, ModelKind};
pub use runner::{
    build_instance, diagnose, fit_directory, parse_trajectory_csv, run_experiment, run_seed,
    CliError, CliResult, SummaryRow,
};
