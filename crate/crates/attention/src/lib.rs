//! Multi-head soft attention classifier.
//!
//! A small stride-2 convolutional backbone over mean-shifted pixels produces feature maps `X`
//! (`N×C×H×W`); a 1×1 convolution followed by ReLU produces `M` attention
//! maps `A`; each map weights `X` and is average-pooled into a part vector;
//! the concatenated parts are ℓ2-normalized into `h`, which a linear layer
//! classifies.

mod checkpoint;
mod error;
mod model;

pub use checkpoint::{
    load_checkpoint, manifest_text, save_checkpoint, MANIFEST_FILE, WEIGHTS_FILE,
};
pub use error::{AttentionError, Result};
pub use model::{
    attention_pool, global_representation, AttentionMaps, AttentionModel, BoundParams, FeatureMaps,
    Forward, GlobalRepresentation, ModelConfig, Param, Prediction, CHANNEL_SCHEDULE,
    DEFAULT_CLASSIFICATION_HEADS, DEFAULT_DEPTH, DEFAULT_RETRIEVAL_HEADS, IMAGE_CHANNELS,
    INPUT_MEAN,
};
