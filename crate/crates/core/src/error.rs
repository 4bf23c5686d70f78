use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Argument outside the domain of a special function.
    #[error("domain error: {0}")]
    Domain(String),

    /// NaN or infinity where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error at line {line}, column {column}: {message}")]
    Ingestion {
        line: u64,
        column: String,
        message: String,
    },

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error("snapshot incompatible with configuration: {0}")]
    Compatibility(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
