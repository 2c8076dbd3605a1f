use cal_attention::AttentionError;
use cal_counterfactual::CounterfactualError;
use cal_eval::EvalError;
use cal_synthdata::SynthError;
use cal_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("unknown objective {0:?}; expected one of baseline, cal, dropout, entropy, l2norm")]
    UnknownObjective(String),
    #[error("unknown ablation axis {0:?}; valid axes: strategy, M, objective")]
    UnknownAxis(String),
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("sample {index} has label {label} but the model has {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Counterfactual(#[from] CounterfactualError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
