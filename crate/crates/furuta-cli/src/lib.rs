//! End-to-end pipeline behind the `furuta` binary.

pub mod config;
pub mod output;
pub mod pipeline;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing upstream artifact: {}", .0.display())]
    Missing(PathBuf),
    #[error("malformed artifact {}: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },
    #[error(transparent)]
    Model(#[from] furuta_ssm::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn malformed(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        CliError::Malformed { path: path.into(), reason: reason.to_string() }
    }

    /// Process exit code: 2 for validation problems, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Missing(_) | CliError::Malformed { .. } => 2,
            CliError::Model(furuta_ssm::Error::InvalidParameter(_)) => 2,
            _ => 1,
        }
    }
}

/// Files written by a stage plus any reliability warnings.
#[derive(Debug, Default, Clone)]
pub struct StageReport {
    pub files: Vec<PathBuf>,
    pub unreliable: Vec<String>,
}
