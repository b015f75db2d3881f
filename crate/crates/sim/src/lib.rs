//! Experiment runner for the `pfedmoe-core` simulator: TOML
//! configuration, dataset files, the output bundle, checkpoints, and a
//! rayon executor for client updates.

pub mod config;
pub mod error;
pub mod formats;
pub mod runner;
pub mod summary;

pub use config::{parse_config, ExperimentConfig};
pub use error::{Result, SimError};
pub use runner::{run, run_file, RunOptions, RunOutcome};
