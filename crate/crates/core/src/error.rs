use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input outside the domain of an operation (bad geometry, bad dims, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Statistical input that cannot produce a finite statistic.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Malformed dataset or checkpoint file. `field` names the part that failed.
    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Degenerate(_) => "degenerate",
            Error::Format { .. } => "format",
            Error::Training(_) => "training",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
