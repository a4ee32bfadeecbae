//! Scenario-driven experiment runner for `critsds-core`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod registry;
pub mod runner;

pub use config::{Diagnostic, ScenarioConfig};
pub use runner::{run, write_artifacts, RunOptions, RunOutput, Status};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] critsds_core::Error),
}

impl CliError {
    /// Process exit code: every error is a crash or config failure.
    pub fn exit_code(&self) -> i32 {
        2
    }
}
