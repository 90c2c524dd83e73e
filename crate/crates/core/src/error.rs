//! Error type shared across the toolkit.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by tensor operations, the network, data handling and the
/// training pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible.
    Dim(String),
    /// A configuration value is invalid or inconsistent.
    Config(String),
    /// An operation was called outside its contract.
    Usage(String),
    /// A file on disk does not match the expected layout.
    Format(String),
    /// Patch sampling could not produce a valid sample.
    Sampling(String),
    /// Synthetic volume generation failed.
    Generation(String),
    /// Whole-volume inference could not run on the given case.
    Inference(String),
    /// The optimisation loop left the healthy numeric regime.
    Training(String),
    /// Underlying I/O failure.
    Io(String),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn sampling(msg: impl Into<String>) -> Self {
        Error::Sampling(msg.into())
    }
    pub fn generation(msg: impl Into<String>) -> Self {
        Error::Generation(msg.into())
    }
    pub fn inference(msg: impl Into<String>) -> Self {
        Error::Inference(msg.into())
    }
    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim(m) => write!(f, "dimension error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Sampling(m) => write!(f, "sampling error: {m}"),
            Error::Generation(m) => write!(f, "generation error: {m}"),
            Error::Inference(m) => write!(f, "inference error: {m}"),
            Error::Training(m) => write!(f, "training error: {m}"),
            Error::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
