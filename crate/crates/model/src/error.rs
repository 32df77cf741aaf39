use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty history")]
    EmptyHistory,
    #[error("non-finite loss at step {step} (batch {batch}, grad norm {grad_norm})")]
    NonFinite { step: u64, batch: u64, grad_norm: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
