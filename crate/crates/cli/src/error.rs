use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    /// The backend cannot serve any further request.
    #[error("fatal backend error: {0}")]
    Fatal(String),
    #[error("missing traces for dataset {dataset}, {label}, d={d}: {} not found", path.display())]
    MissingTraces { dataset: String, label: String, d: usize, path: PathBuf },
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Fatal(_) => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }
}
