//! Experiment driver: TOML configs, seeded runs, suites and boundary renders.

pub mod commands;
pub mod config;
pub mod error;
pub mod run;
pub mod suite;

pub use config::{ExperimentConfig, LoadedConfig, Method, OUTPUT_ROOT_ENV};
pub use error::{CliError, CliResult};
pub use run::{run_seed, MethodResult, SeedResult};
pub use suite::{run_suite, Summary, SummaryRow};
