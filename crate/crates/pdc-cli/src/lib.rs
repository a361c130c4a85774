//! Experiment harness for the proximal dual consensus solver.
//!
//! The binary (`pdc`) is a thin wrapper over this library so the command
//! implementations stay testable:
//!
//! - [`config`]: the experiment description (instance, graph, solver,
//!   sweep, repeats) parsed from flat key-value text or JSON;
//! - [`commands`]: `run`, `sweep`, `bounds`, `spectra` — building
//!   instances, executing seeded repeats, and writing trace/summary files;
//! - [`checks`]: the named verification suites behind `pdc check`.
//!
//! Exit-code contract: 0 success, 1 solver abort, 2 config error, 3 check
//! failure.

pub mod checks;
pub mod commands;
pub mod config;

use thiserror::Error;

/// Harness-level failure, carrying the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver abort: {0}")]
    Solver(String),
    #[error("check failure: {0}")]
    Check(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 1,
            CliError::Check(_) => 3,
            // I/O problems are config-class: bad paths, unwritable dirs.
            CliError::Io(_) => 2,
        }
    }
}
