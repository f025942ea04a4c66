//! Config-driven experiment runner around the `hycon` library: dataset
//! generation, multi-seed training, evaluation, sweeps, loss comparisons,
//! gradient checks and embedding export.
//!
//! Every command writes its files plus the effective config into the
//! output directory. Outputs carry no timestamps and are byte-identical
//! across re-runs with the same config.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod output;

pub use config::ExperimentConfig;

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config, arguments or input files.
    #[error("{0}")]
    Validation(String),
    /// Non-finite loss or a failed gradient check.
    #[error("{0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => 1,
            CliError::Numerical(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<hycon::Error> for CliError {
    fn from(e: hycon::Error) -> Self {
        match e {
            hycon::Error::NonFinite { .. } => CliError::Numerical(e.to_string()),
            hycon::Error::Io(source) => CliError::Io {
                path: "<stream>".into(),
                source,
            },
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
