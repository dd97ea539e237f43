//! Command-line front end: strict TOML configuration, the `rate-curve`,
//! `simulate` and `validate` subcommands, and deterministic CSV output.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::run;
pub use config::{LoadedConfig, Resolved, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "qaze", version, about = "Quantum Zeno / anti-Zeno decay-rate simulator")]
pub struct Cli {
    /// TOML run configuration (SI units).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding [output].directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Accepted for script compatibility; the computation uses no randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand, PartialEq, Eq)]
pub enum Command {
    /// R(τ) over the [rates] grid, with the golden-rule reference.
    RateCurve,
    /// Run the pulse protocol for each [protocol] interval and fit decay rates.
    Simulate,
    /// Evaluate the weak-coupling validity condition.
    Validate,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical accuracy not reached: {0}")]
    Accuracy(String),
    #[error("validity condition violated: {0}")]
    Validity(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Accuracy(_) => 3,
            CliError::Validity(_) => 4,
            CliError::Io(_) | CliError::Internal(_) => 1,
        }
    }
}

impl From<qaze_core::Error> for CliError {
    fn from(e: qaze_core::Error) -> Self {
        use qaze_core::Error as E;
        match e {
            E::AccuracyNotReached { .. } => CliError::Accuracy(e.to_string()),
            E::Io(m) => CliError::Io(m),
            E::Internal(m) => CliError::Internal(m),
            E::FitDomain(_) => CliError::Internal(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
