use cal_attention::AttentionError;
use cal_synthdata::SynthError;
use cal_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot evaluate on an empty {0}")]
    Empty(&'static str),
    #[error("threshold fraction must lie strictly between 0 and 1, got {0}")]
    Threshold(f64),
    #[error("query identity {0} has no match in the gallery")]
    MissingIdentity(usize),
    #[error("sample {index} has no identity label")]
    Unlabeled { index: usize },
    #[error("{what}: expected {expected}, got {actual}")]
    Mismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
