use cal_attention::AttentionError;
use cal_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CounterfactualError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error("shuffle strategy needs a batch of at least 2 samples (N >= 2), got {0}")]
    ShuffleNeedsBatch(usize),
    #[error("unknown strategy {0:?}; expected one of random|uniform|reversed|shuffle")]
    UnknownStrategy(String),
    #[error("random strategy bounds must satisfy 0 <= lo < hi, got [{lo}, {hi})")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("dropout probability must lie in [0, 1), got {0}")]
    InvalidProbability(f64),
    #[error("lambda_effect must be a finite value >= 0, got {0}")]
    InvalidLambda(f64),
    #[error("attention maps must be nonnegative")]
    NegativeAttention,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T, E = CounterfactualError> = std::result::Result<T, E>;
