use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by restoration, simulation, and I/O routines.
///
/// Variants are kept distinct so the CLI can map them onto stable exit
/// codes (bad arguments vs. I/O failure vs. solver failure).
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("image has a zero dimension")]
    ZeroDimension,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("conjugate gradient did not converge: residual {residual:.3e} after {iterations} iterations")]
    CgNoConvergence { residual: f64, iterations: usize },

    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures caused by the filesystem rather than by inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Read { .. } | Error::Write { .. })
    }
}
