use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("illegal action {action} for {env}")]
    IllegalAction { env: &'static str, action: usize },

    #[error("training failed at step {step}: {reason}")]
    Training { step: u64, reason: String },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    /// Errors the CLI reports with exit code 1 rather than 2.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
