//! Error taxonomy shared by every module.
//!
//! Variants map onto the CLI exit codes: validation problems (bad shapes,
//! bad arguments, unparseable files) exit 2, I/O failures exit 3, and
//! non-finite numerics exit 4.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an expectation) disagree on shape.
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A structured input file failed to parse.
    #[error("parse error in {path} (row {row}): {msg}")]
    Parse {
        path: String,
        row: usize,
        msg: String,
    },

    /// Filesystem failure, annotated with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// An operation produced NaN or Inf from finite inputs.
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// A grid cell failed; carries the cell key and the underlying error.
    #[error("grid cell {key} failed: {source}")]
    Grid {
        key: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
