use std::path::{Path, PathBuf};

use flame_core::layerfit::StoreError;
use flame_core::profiler::DatasetError;
use thiserror::Error;

/// Failures surfaced to the user, each mapped to a distinct exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    Validation { context: String, message: String },
    #[error("fit failed: {0}")]
    Fit(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Validation { .. } => 4,
            CliError::Fit(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Validation { .. } => "validation",
            CliError::Fit(_) => "fit",
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub fn invalid(context: impl Into<String>, message: impl ToString) -> Self {
        CliError::Validation {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { path, source } => CliError::Io { path, source },
            other => CliError::invalid("dataset", other),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { path, source } => CliError::Io { path, source },
            other => CliError::invalid("estimators", other),
        }
    }
}
