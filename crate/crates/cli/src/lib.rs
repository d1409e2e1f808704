//! Scenario runner for the `rvm-core` pipelines.
//!
//! A scenario file names a source, the pipelines to run and their grids;
//! [`run`] executes them, writes the CSV/JSON artifacts and returns a report
//! whose checks decide the exit status.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{Pipeline, Scenario};
pub use report::Report;
pub use runner::{run, RunOptions, RunOutcome};

/// Failures of a run, each mapped to an exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rvm_core::Error),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    /// `1` when the computation ran but did not converge, `2` otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(rvm_core::Error::NoConvergence { .. })
            | CliError::Core(rvm_core::Error::Extrapolation(_)) => 1,
            _ => 2,
        }
    }
}
