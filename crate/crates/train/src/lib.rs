//! Training for the attention model.
//!
//! The objectives are the plain factual cross-entropy, the counterfactual
//! objective that adds the cross-entropy of the effect logits, and three
//! attention regularizers used for comparison (dropout, entropy, ℓ2
//! normalization). Retrieval runs add a batch-hard triplet loss. The
//! ablation harness sweeps one setting over several seeds.

mod ablation;
mod config;
mod error;
mod experiment;
mod loss;
mod optim;
mod trainer;

pub use ablation::{mean_sd, run_ablation, AblationAxis, AblationRow, AblationRun, AblationTable};
pub use config::{Objective, TrainConfig};
pub use error::{Result, TrainError};
pub use experiment::run_experiment;
pub use loss::triplet_loss;
pub use optim::Sgd;
pub use trainer::{objective_step, train, StepResult};
