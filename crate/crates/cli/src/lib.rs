//! Command-line driver: configuration resolution, experiment commands and
//! on-disk outputs (`metrics.csv`, `summary.json`, `config.txt` per run).

pub mod args;
pub mod commands;
pub mod error;
pub mod settings;

pub use error::{CliError, Result};
