//! Inference-only evaluation.
//!
//! Every metric here reads the factual forward pass and nothing else:
//! top-1 accuracy, attention mIoU against ground-truth boxes, and the
//! CMC curve and mAP of embedding retrieval.

mod bundle;
mod classify;
mod error;
mod predict;
mod report;
mod retrieval;

pub use bundle::evaluate_bundle;
pub use classify::{
    argmax_rows, attention_box, attention_miou, evaluate_classification, evaluate_classifier,
    top1_accuracy, ClassificationEval,
};
pub use error::{EvalError, Result};
pub use predict::{predict_samples, EvalOptions};
pub use report::{opt_field, EpochRecord, MetricsReport, EPOCH_HEADER, SUMMARY_HEADER};
pub use retrieval::{evaluate_retrieval, rank_gallery, retrieval_metrics, RetrievalEval};
