use std::path::PathBuf;

/// Errors raised by the toolkit. Variants map onto CLI exit codes through
/// [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("ingestion error: {0}")]
    Ingest(String),
    #[error("data error at {}: {reason}", path.display())]
    Data { path: PathBuf, reason: String },
    #[error("dependency error: {0}")]
    Dependency(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("state error: {0}")]
    State(String),
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 configuration, 3 data, 4 dependency, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::State(_) | Error::Shape(_) => 2,
            Error::Ingest(_) | Error::Data { .. } | Error::Integrity(_) | Error::Io { .. } => 3,
            Error::Dependency(_) => 4,
            Error::Numeric(_) => 1,
        }
    }
}
