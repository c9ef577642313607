use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("target {y} lies outside the support [{lo}, {hi}]")]
    OutOfSupport { y: f64, lo: f64, hi: f64 },

    #[error(
        "truncated Gaussian at y = {y} with sigma = {sigma} has negligible mass in the support \
         (normalizer {mass:e}); increase the padding"
    )]
    Truncation { y: f64, sigma: f64, mass: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("stale forward trace (trace version {trace}, model version {model})")]
    StaleTrace { trace: u64, model: u64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("csv parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
