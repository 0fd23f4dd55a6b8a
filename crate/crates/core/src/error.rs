//! Error type shared across the crate.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor or layer shape is inconsistent with its context.
    #[error("shape error: {0}")]
    Shape(String),
    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),
    /// An evaluation budget is too small for the requested operation.
    #[error("budget error: {0}")]
    Budget(String),
    /// A binary container did not match the expected format.
    #[error("format error: {0}")]
    Format(String),
    /// Image and label files disagree on the number of examples.
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    /// A file payload ended before the declared size.
    #[error("truncated input: {0}")]
    Truncation(String),
    /// Wrong number of image channels for the requested conversion.
    #[error("channel error: {0}")]
    Channel(String),
    /// A requested subset size is not satisfiable.
    #[error("size error: {0}")]
    Size(String),
    /// Training diverged or produced non-finite values.
    #[error("training error: {0}")]
    Training(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub(crate) fn budget(msg: impl Into<String>) -> Self {
        Error::Budget(msg.into())
    }
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
