//! Errors of the file-level tools and their exit codes.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Codec(#[from] promptcodec_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("pesq tool: {0}")]
    Pesq(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    /// Stable short code printed with every error.
    pub fn code(&self) -> &'static str {
        use promptcodec_core::Error as E;
        match self {
            Self::Codec(E::InvalidInput(_)) => "invalid-input",
            Self::Codec(E::InvalidConfig(_)) => "invalid-config",
            Self::Codec(E::CorruptStream(_)) => "corrupt-stream",
            Self::Codec(E::MissingPrompt(_)) => "missing-prompt",
            Self::Codec(E::Numerical(_)) => "numerical",
            Self::Io { .. } => "io",
            Self::Wav { .. } => "wav",
            Self::Config(_) => "config",
            Self::Checkpoint(_) => "checkpoint",
            Self::Manifest(_) => "manifest",
            Self::Json(_) => "json",
            Self::Csv(_) => "csv",
            Self::Pesq(_) => "pesq",
        }
    }
}
