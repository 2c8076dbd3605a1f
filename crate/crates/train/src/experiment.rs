use std::time::Instant;

use cal_attention::AttentionModel;
use cal_eval::{evaluate_bundle, EvalOptions, MetricsReport};
use cal_synthdata::DatasetBundle;

use crate::config::TrainConfig;
use crate::error::Result;
use crate::trainer::train;

/// Builds a fresh model for `bundle`, trains it, and evaluates it on the
/// bundle's test split (classification) or query/gallery (retrieval).
pub fn run_experiment(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    options: &EvalOptions,
) -> Result<(AttentionModel, MetricsReport)> {
    config.validate()?;
    bundle.spec().check_depth(config.depth)?;
    let start = Instant::now();
    let model = AttentionModel::new(config.model_config(bundle.train_classes()))?;
    let (model, trained) = train(model, bundle.train(), config)?;
    let mut report = evaluate_bundle(&model, bundle, options)?;
    report.epochs = trained.epochs;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok((model, report))
}
