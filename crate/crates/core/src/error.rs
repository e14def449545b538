//! Crate-wide error type.

/// Errors surfaced by store construction, search, and persistence.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration (bad vocabulary, dimensions that do not divide, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// A call that violates an API contract (empty index, dimension mismatch, ...).
    #[error("usage error: {0}")]
    Usage(String),
    /// A file that is not a valid artifact of this crate (bad magic, truncation,
    /// flavor mismatch, unparseable corpus line).
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
