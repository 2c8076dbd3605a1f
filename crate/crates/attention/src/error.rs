use cal_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("image size {height}x{width} is not divisible by {divisor} (2^depth)")]
    IndivisibleInput {
        height: usize,
        width: usize,
        divisor: usize,
    },
    #[error("{what}: expected {expected}, got {actual}")]
    Mismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AttentionError> = std::result::Result<T, E>;
