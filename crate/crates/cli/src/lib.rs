//! Orchestration for the `pkml` command line: configuration, run manifests
//! and the experiment commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod selftest;

pub use config::ExperimentConfig;
pub use error::{CliError, ExitKind};
