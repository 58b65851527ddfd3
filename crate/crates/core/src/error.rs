//! Crate-wide error type and result alias.

use std::path::PathBuf;

/// Errors produced by the engine. Variants map onto the distinct failure
/// classes callers are expected to handle (and onto CLI exit codes).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor operands do not have the extents an operation requires.
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A serialized artifact is malformed. `offset` is the byte position
    /// at which decoding failed.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Out-of-bounds step index, split index, or dataset reference.
    #[error("index error: {0}")]
    Index(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training error: {0}")]
    Training(String),

    /// Numeric input outside the documented domain.
    #[error("range error: {0}")]
    Range(String),

    /// Filesystem failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an I/O error with the path that produced it.
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
