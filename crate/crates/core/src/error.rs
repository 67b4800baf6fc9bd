use thiserror::Error;

/// Errors surfaced across the library. Shape violations inside tape ops are
/// programmer errors and panic instead; everything a caller can plausibly
/// recover from (bad arguments, bad files, diverged training) lands here.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at step {step} (loss {loss}, lr {lr}, grad norm {grad_norm})")]
    NonFiniteLoss { step: usize, loss: f64, lr: f64, grad_norm: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }
}
