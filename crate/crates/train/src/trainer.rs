use std::time::Instant;

use cal_attention::{AttentionModel, BoundParams};
use cal_counterfactual::{
    attention_dropout, cal_loss, compute_effect, counterfactual_predict, entropy_regularizer,
    generate_counterfactual, CounterfactualStrategy,
};
use cal_eval::{argmax_rows, EpochRecord, MetricsReport};
use cal_synthdata::{image_batch, SyntheticSample};
use cal_tensor::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Objective, TrainConfig, DROPOUT_SALT};
use crate::error::{Result, TrainError};
use crate::loss::triplet_loss;
use crate::optim::Sgd;

/// Scalars and gradients of one optimization step.
pub struct StepResult {
    pub loss: f64,
    pub factual_ce: f64,
    pub logits: Tensor,
    /// Per parameter, in [`AttentionModel::params`] order.
    pub grads: Vec<Option<Vec<f64>>>,
}

/// Forward and backward pass of the configured objective on one batch.
///
/// `identities` switches on the triplet term. `step` selects the RNG
/// streams of the counterfactual draw and of attention dropout.
pub fn objective_step(
    model: &AttentionModel,
    config: &TrainConfig,
    strategy: &CounterfactualStrategy,
    images: Tensor,
    labels: &[usize],
    identities: Option<&[usize]>,
    step: u64,
) -> Result<StepResult> {
    let mut g = Graph::new();
    let bound: BoundParams = model.bind(&mut g, true);
    let input = g.constant(images);
    let features = model.extract_features(&mut g, &bound, input)?;
    let mut attention = model.compute_attention(&mut g, &bound, features)?;
    if config.objective == Objective::Dropout {
        attention = attention_dropout(
            &mut g,
            attention,
            config.dropout_p,
            config.seed ^ DROPOUT_SALT,
            step,
        )?;
    }
    let representation = model.pool_and_classify_input(&mut g, features, attention)?;
    let logits = model.classify(&mut g, &bound, representation)?;
    let ce = g.softmax_cross_entropy(logits, labels)?;
    let mut loss = match config.objective {
        Objective::Cal => {
            let a_bar = generate_counterfactual(g.value(attention.var()), strategy, step)?;
            let y_cf = counterfactual_predict(model, &mut g, &bound, features, &a_bar)?;
            let effect = compute_effect(&mut g, logits, y_cf)?;
            cal_loss(&mut g, effect, logits, labels, config.lambda_effect)?
        }
        Objective::Entropy => {
            let reg = entropy_regularizer(&mut g, attention)?;
            let weighted = g.scale(reg, config.entropy_weight);
            g.add(ce, weighted)?
        }
        Objective::Baseline | Objective::Dropout | Objective::L2Norm => ce,
    };
    if let Some(ids) = identities {
        let triplet = triplet_loss(&mut g, representation.var(), ids, config.triplet_margin)?;
        loss = g.add(loss, triplet)?;
    }
    let loss_value = g.value(loss).item();
    if !loss_value.is_finite() {
        return Err(TrainError::Diverged {
            step,
            loss: loss_value,
        });
    }
    g.backward(loss)?;
    Ok(StepResult {
        loss: loss_value,
        factual_ce: g.value(ce).item(),
        logits: g.value(logits).clone(),
        grads: bound
            .vars()
            .iter()
            .map(|&v| g.grad(v).map(<[f64]>::to_vec))
            .collect(),
    })
}

fn check_inputs(
    model: &AttentionModel,
    samples: &[SyntheticSample],
    config: &TrainConfig,
) -> Result<()> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let classes = model.config().classes;
    if let Some((index, s)) = samples
        .iter()
        .enumerate()
        .find(|(_, s)| s.class_label >= classes)
    {
        return Err(TrainError::LabelOutOfRange {
            index,
            label: s.class_label,
            classes,
        });
    }
    if config.objective == Objective::L2Norm && !model.config().normalize_attention {
        return Err(TrainError::Config(
            "the l2norm objective needs a model built with normalize_attention".into(),
        ));
    }
    Ok(())
}

/// Trains `model` on `samples` with SGD and returns it with per-epoch statistics.
///
/// When every sample carries an identity label the batch-hard triplet loss
/// on the global representation is added to the objective. Batches come
/// from a per-epoch shuffle seeded by `config.seed`; a trailing batch
/// smaller than the counterfactual strategy allows is skipped. The
/// counterfactual draw and dropout masks use their own streams, so
/// `lambda_effect = 0` leaves the run identical to the baseline.
pub fn train(
    mut model: AttentionModel,
    samples: &[SyntheticSample],
    config: &TrainConfig,
) -> Result<(AttentionModel, MetricsReport)> {
    check_inputs(&model, samples, config)?;
    let start = Instant::now();
    let strategy = config.counterfactual_strategy()?;
    let retrieval = samples.iter().all(|s| s.identity_label.is_some());
    let min_batch = if config.objective == Objective::Cal {
        strategy.min_batch()
    } else {
        1
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Sgd::new(&model, config.momentum, config.weight_decay);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step: u64 = 0;
    let mut report = MetricsReport::default();
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut ce_sum, mut batches, mut correct, mut seen) =
            (0.0, 0.0, 0usize, 0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            if batch.len() < min_batch {
                log::debug!("skipping a trailing batch of {} samples", batch.len());
                continue;
            }
            let labels: Vec<usize> = batch.iter().map(|&i| samples[i].class_label).collect();
            let ids: Option<Vec<usize>> = retrieval.then(|| {
                batch
                    .iter()
                    .filter_map(|&i| samples[i].identity_label)
                    .collect()
            });
            let images = image_batch(samples, batch)?;
            let out = objective_step(
                &model,
                config,
                &strategy,
                images,
                &labels,
                ids.as_deref(),
                step,
            )?;
            optimizer.step(&mut model, &out.grads, lr);
            loss_sum += out.loss;
            ce_sum += out.factual_ce;
            batches += 1;
            correct += argmax_rows(&out.logits)
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();
            seen += batch.len();
            step += 1;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            learning_rate: lr,
            loss: loss_sum / batches.max(1) as f64,
            factual_ce: ce_sum / batches.max(1) as f64,
            train_top1: correct as f64 / seen.max(1) as f64,
        };
        log::info!(
            "epoch {}/{}: loss {:.4}, factual CE {:.4}, train top-1 {:.3}",
            record.epoch,
            config.epochs,
            record.loss,
            record.factual_ce,
            record.train_top1
        );
        report.epochs.push(record);
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok((model, report))
}
