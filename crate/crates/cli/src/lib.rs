//! Command-line front end: configs in, CSV files and text reports out.
//!
//! Every command is a pure function of the config and the seed; reruns
//! reproduce the output files byte for byte.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use kpo::Error;

pub use commands::{run, Command, Options};
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(Error),
    #[error("cannot write {path}: {msg}")]
    Output { path: PathBuf, msg: String },
    #[error("{failed} of {total} sweep points failed")]
    PartialSweep { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) | CliError::Output { .. } => EXIT_NUMERIC,
            CliError::PartialSweep { .. } => EXIT_PARTIAL,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParams(_)
            | Error::DimensionCap { .. }
            | Error::InvalidBinWidth(_)
            | Error::ChannelCollision(..)
            | Error::InvalidBin(_) => CliError::Config(e.to_string()),
            other => CliError::Numeric(other),
        }
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book {}
