//! Counterfactual attention interventions and the training objective built on them.
//!
//! During training the factual attention `A` is replaced by an imagined
//! `Ā` while the features stay fixed; the difference between the factual
//! and counterfactual logits measures how much the learned attention helps,
//! and cross-entropy on that difference is added to the usual loss.
//!
//! `Ā` is always a constant in the computation record: the intervention
//! cuts the dependency of the attention on the features, so no gradient
//! reaches the attention head through it. Nothing here runs at inference.
//!
//! The attention regularizers used as comparison baselines (dropout,
//! entropy, ℓ2 normalization) also live here.

mod error;
mod objective;
mod strategy;

pub use error::{CounterfactualError, Result};
pub use objective::{
    attention_dropout, attention_l2_normalize, cal_loss, compute_effect, counterfactual_predict,
    entropy_regularizer, EffectLogits,
};
pub use strategy::{generate_counterfactual, rng_stream, CounterfactualStrategy, StrategyKind};
