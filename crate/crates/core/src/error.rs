use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or dimensions that do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An operation parameter outside its valid range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A caller broke an API contract (e.g. backward from a non-scalar node).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    /// A file on disk that does not follow its documented format.
    #[error("format error in {}: {message}", file.display())]
    Format { file: PathBuf, message: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite value at epoch {epoch}, batch {batch}: {detail}")]
    Numerical { epoch: usize, batch: usize, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(file: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { file: file.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
