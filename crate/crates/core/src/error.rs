use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point set")]
    Empty,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("size mismatch: expected {expected} particles, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("non-finite value at particle {index}")]
    NonFinite { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("brute-force transport limited to n <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("numerical blow-up at t = {time}")]
    BlowUp { time: f64 },
    #[error("custom callback failed: {0}")]
    Callback(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
