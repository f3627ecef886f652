use gtm_autodiff::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("dimension mismatch: {what} expects {expected}, got {actual}")]
    DimMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
