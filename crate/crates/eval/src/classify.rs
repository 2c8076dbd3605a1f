use cal_attention::AttentionModel;
use cal_synthdata::{BBox, SyntheticSample};
use cal_tensor::Tensor;

use crate::error::{EvalError, Result};
use crate::predict::{predict_samples, EvalOptions};

/// Index of the largest logit in each row; the first one wins ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

pub fn top1_accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(EvalError::Empty("label set"));
    }
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(EvalError::Mismatch {
            what: "logit rows vs labels",
            expected: labels.len().to_string(),
            actual: format!("{:?}", logits.shape()),
        });
    }
    let hits = argmax_rows(logits)
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Top-1 accuracy of the factual logits.
pub fn evaluate_classification(
    model: &AttentionModel,
    samples: &[SyntheticSample],
    options: &EvalOptions,
) -> Result<f64> {
    let pred = predict_samples(model, samples, options)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.class_label).collect();
    top1_accuracy(&pred.logits, &labels)
}

/// Accuracy and attention mIoU from one inference pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationEval {
    pub top1_accuracy: f64,
    pub attention_miou: f64,
}

pub fn evaluate_classifier(
    model: &AttentionModel,
    samples: &[SyntheticSample],
    options: &EvalOptions,
) -> Result<ClassificationEval> {
    let pred = predict_samples(model, samples, options)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.class_label).collect();
    let boxes: Vec<BBox> = samples.iter().map(|s| s.object_bbox).collect();
    let size = samples[0].image.shape()[2];
    Ok(ClassificationEval {
        top1_accuracy: top1_accuracy(&pred.logits, &labels)?,
        attention_miou: attention_miou(&pred.attention, &boxes, size, options.threshold_fraction)?,
    })
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(EvalError::Threshold(t));
    }
    Ok(())
}

/// Max over heads of one sample's `M×h×w` maps.
fn head_max(maps: &[f64], cells: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; cells];
    for head in maps.chunks(cells) {
        for (o, &v) in out.iter_mut().zip(head) {
            *o = o.max(v);
        }
    }
    out
}

/// Tight rectangle, in image pixels, around the attended region of one
/// sample's maps (`M×h×w` values, flattened).
///
/// Heads are merged by maximum, the merged map is nearest-neighbor
/// upsampled to `image_size`, and pixels at or above
/// `threshold_fraction × max` are marked. Returns `None` when all
/// attention is zero.
pub fn attention_box(
    maps: &[f64],
    h: usize,
    w: usize,
    image_size: usize,
    threshold_fraction: f64,
) -> Result<Option<BBox>> {
    check_threshold(threshold_fraction)?;
    let merged = head_max(maps, h * w);
    let peak = merged.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Ok(None);
    }
    let cut = threshold_fraction * peak;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..image_size {
        let cy = y * h / image_size;
        for x in 0..image_size {
            let cx = x * w / image_size;
            if merged[cy * w + cx] >= cut {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    Ok(Some(BBox::new(x0, y0, x1, y1)?))
}

/// Mean IoU between each sample's attended rectangle and its ground-truth box.
/// Samples whose attention is all zero count as IoU 0.
pub fn attention_miou(
    attention: &Tensor,
    boxes: &[BBox],
    image_size: usize,
    threshold_fraction: f64,
) -> Result<f64> {
    check_threshold(threshold_fraction)?;
    let s = attention.shape();
    if s.len() != 4 || s[0] != boxes.len() {
        return Err(EvalError::Mismatch {
            what: "attention batch vs boxes",
            expected: format!("{}×M×h×w", boxes.len()),
            actual: format!("{s:?}"),
        });
    }
    if boxes.is_empty() {
        return Err(EvalError::Empty("box set"));
    }
    let per_sample = attention.numel() / s[0];
    let mut total = 0.0;
    for (maps, gt) in attention.data().chunks(per_sample).zip(boxes) {
        if let Some(b) = attention_box(maps, s[2], s[3], image_size, threshold_fraction)? {
            total += b.iou(gt);
        }
    }
    Ok(total / boxes.len() as f64)
}
