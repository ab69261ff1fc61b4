use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("incompatible inputs: {0}")]
    Schema(String),
    #[error(transparent)]
    Sim(#[from] turndelay::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Machine-readable code written to the summary on failure.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Config(_) => "ConfigError",
            CliError::Io { .. } => "IoError",
            CliError::Schema(_) => "SchemaError",
            CliError::Sim(e) => e.code(),
        }
    }

    /// Process exit status; simulation and solver failures share one value.
    pub fn exit_status(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Schema(_) => 5,
            CliError::Sim(_) => 6,
        }
    }
}
