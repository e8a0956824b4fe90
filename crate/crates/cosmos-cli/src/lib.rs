//! Library surface of the cosmos CLI: configuration, persistence, metrics,
//! the ablation harness, and the command implementations the binary calls.

pub mod ablate;
pub mod archive;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
