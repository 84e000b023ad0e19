//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix/vector dimensions.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// Batch statistics need at least two rows.
    #[error("batch too small: {rows} row(s), need at least 2 for batch statistics")]
    BatchTooSmall { rows: usize },

    /// backward called without a matching forward.
    #[error("no cached forward pass for {layer}")]
    NoForwardCache { layer: &'static str },

    /// Invalid configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    /// A numeric routine produced or encountered a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Metric undefined for the given class composition.
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
