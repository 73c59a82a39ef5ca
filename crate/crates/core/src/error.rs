use thiserror::Error;

/// Errors raised by the Laplace toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or lengths do not conform.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A factorization or numerical routine failed.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A requested dense materialization exceeds the configured cap.
    #[error("resource error: {0}")]
    Resource(String),

    /// Hyperparameter calibration could not produce a result.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// The posterior has no usable directions.
    #[error("degenerate posterior: {0}")]
    Degenerate(String),

    /// Optimization diverged (non-finite loss).
    #[error("divergence at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64, trace: Vec<f64> },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
