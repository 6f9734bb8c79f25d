//! Crate-wide error type.
//!
//! Variants are grouped by how a caller should react: configuration problems
//! (fix the inputs), data problems (fix the files / measurements), and
//! numerical failures (fix the model or report a bug). The CLI maps these
//! groups onto its exit codes.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A function argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration value failed validation; `field` names the offending
    /// entry with a dotted path (e.g. `trap.lambda`).
    #[error("invalid configuration for `{field}`: {message}")]
    Config { field: String, message: String },

    /// Two objects that must share a dimension or grid do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Input data is structurally valid but unusable (all-zero image,
    /// degenerate dataset, nonpositive total weight, ...).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A state or parameter régime the implementation deliberately does not
    /// cover.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A requested operation does not fit in the truncated basis; `leakage`
    /// estimates the probability weight lost past the truncation.
    #[error("basis truncation exceeded: {message} (estimated leaked weight {leakage:.3e})")]
    Truncation { message: String, leakage: f64 },

    /// An eigendecomposition, solve, or iteration produced non-finite values
    /// or failed to make progress.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: msg.into(),
        }
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn unsupported(msg: impl Into<String>) -> Self {
        Self::Unsupported(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateData(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
