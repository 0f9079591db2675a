use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not orthogonal: max |UᵀU - I| = {max_deviation:.3e}")]
    NotOrthogonal { max_deviation: f64 },

    #[error("invalid phase schedule: {0}")]
    InvalidSchedule(String),

    #[error("singular value factorization did not converge after {sweeps} sweeps (residual {residual:.3e})")]
    ConvergenceFailure { sweeps: usize, residual: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("bad IDX magic 0x{found:08X} at offset {offset}")]
    BadMagic { offset: usize, found: u32 },

    #[error("truncated IDX data at offset {offset}: expected {expected} bytes, found {found}")]
    TruncatedPayload { offset: usize, expected: usize, found: usize },

    #[error("IDX dimensions overflow at offset {offset}")]
    DimensionOverflow { offset: usize },

    #[error("{count} unexpected trailing bytes after IDX payload at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },

    #[error("training did not converge: {0}")]
    NonConvergence(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { expected: u32, found: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}
