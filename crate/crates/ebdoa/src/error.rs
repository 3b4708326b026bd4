//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// The requested room geometry cannot produce the requested decay time.
    #[error(
        "room {lx:.2} x {ly:.2} x {lz:.2} m cannot reach T60 = {t60} s \
         (Sabine absorption {alpha:.3} would have to be >= 1)"
    )]
    InfeasibleRoom {
        lx: f64,
        ly: f64,
        lz: f64,
        t60: f64,
        alpha: f64,
    },

    /// A dataset or model file failed structural validation.
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    /// Stored geometry does not match what the caller expects.
    #[error("geometry mismatch in {context}: expected {expected}, got {actual}")]
    Geometry {
        context: String,
        expected: String,
        actual: String,
    },

    /// WAV parsing failure (bad header, unsupported encoding, wrong rate).
    #[error("{}: {detail}", path.display())]
    Wav { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A numerical routine could not produce a finite result.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
