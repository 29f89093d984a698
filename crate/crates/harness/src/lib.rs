//! Command-line harness around `slowfast-core`: fixture I/O, run
//! configuration, synthetic inputs, gradient checks, the ablation runner and
//! the self-test suite.

pub mod ablate;
pub mod commands;
pub mod config;
pub mod fixture;
pub mod health;
pub mod oracle;
pub mod params;
pub mod selftest;
pub mod synth;
pub mod variants;

use thiserror::Error;

/// Failure of a command, carrying its exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or input files: exit 2.
    #[error("{0}")]
    Usage(String),
    /// A verification ran and failed: exit 1.
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Check(_) => 1,
        }
    }

    pub fn from_core(e: slowfast_core::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<fixture::FixtureError> for CliError {
    fn from(e: fixture::FixtureError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}
