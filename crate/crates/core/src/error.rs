use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on shapes, ranges or configuration was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// The eigensolver exhausted its sweep budget.
    #[error(
        "eigensolver did not converge after {iterations} iterations (relative off-diagonal residual {residual:.3e})"
    )]
    Convergence { iterations: usize, residual: f64 },

    /// Malformed input text.
    #[error("parse error in {}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    /// Well-formed input that is inconsistent with the dataset schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input with no usable spread (e.g. every point identical).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A NaN or infinity appeared at a stage boundary.
    #[error("numeric failure at stage `{stage}`")]
    Numeric { stage: &'static str },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint version mismatch: file has version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
