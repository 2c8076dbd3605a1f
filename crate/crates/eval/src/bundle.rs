use cal_attention::AttentionModel;
use cal_synthdata::DatasetBundle;

use crate::classify::evaluate_classifier;
use crate::error::Result;
use crate::predict::EvalOptions;
use crate::report::MetricsReport;
use crate::retrieval::evaluate_retrieval;

/// Test-split metrics for a bundle: accuracy and attention mIoU for
/// classification, CMC and mAP over query/gallery for retrieval.
pub fn evaluate_bundle(
    model: &AttentionModel,
    bundle: &DatasetBundle,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    match bundle {
        DatasetBundle::Classification { test, .. } => {
            let eval = evaluate_classifier(model, test, options)?;
            report.top1_accuracy = Some(eval.top1_accuracy);
            report.attention_miou = Some(eval.attention_miou);
        }
        DatasetBundle::Retrieval { split, .. } => {
            let eval = evaluate_retrieval(model, &split.query, &split.gallery, options)?;
            report.cmc = eval.cmc;
            report.map_score = Some(eval.map_score);
        }
    }
    Ok(report)
}
