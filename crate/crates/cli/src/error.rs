use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("missing input: {}: {reason}", path.display())]
    MissingInput { path: PathBuf, reason: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Core(pedcross::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status: 2 usage, 3 missing input, 4 numeric failure, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingInput { .. } => 3,
            CliError::Numeric(_) | CliError::Core(pedcross::Error::Numeric(_)) => 4,
            CliError::Core(pedcross::Error::InvalidInput(_)) => 2,
            CliError::Core(pedcross::Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 3,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<pedcross::Error> for CliError {
    fn from(e: pedcross::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

/// Fails with exit code 3 unless `path` exists.
pub fn require_file(path: &std::path::Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingInput { path: path.to_path_buf(), reason: format!("{what} not found") })
    }
}
