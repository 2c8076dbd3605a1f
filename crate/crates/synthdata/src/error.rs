use std::path::PathBuf;

use cal_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("malformed dataset file at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("{path}: {reason}")]
    Bundle { path: PathBuf, reason: String },
    #[error("malformed PPM image: {0}")]
    Ppm(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;
