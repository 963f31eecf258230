//! Command-line driver: training, noisy evaluation, placement, denoiser
//! training, hardware cycle simulation and report tables.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod report;

pub use commands::{run, Cli};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};

/// The command-line chapter of the book, compiled as doc-tests.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book {}
