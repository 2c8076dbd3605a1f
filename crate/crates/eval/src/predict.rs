use std::thread;

use cal_attention::{AttentionModel, Prediction};
use cal_synthdata::{image_batch, SyntheticSample};
use cal_tensor::Tensor;

use crate::error::{EvalError, Result};

/// Batch size and worker count for inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub threads: usize,
    /// Fraction of each sample's peak attention that marks a pixel as attended.
    pub threshold_fraction: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            threads: 1,
            threshold_fraction: 0.5,
        }
    }
}

/// Runs the factual forward pass over `samples` in batches.
///
/// Batches are split across up to `threads` workers; results are
/// concatenated in sample order, so the output does not depend on the
/// worker count.
pub fn predict_samples(
    model: &AttentionModel,
    samples: &[SyntheticSample],
    options: &EvalOptions,
) -> Result<Prediction> {
    if samples.is_empty() {
        return Err(EvalError::Empty("sample set"));
    }
    let batch = options.batch_size.max(1);
    let chunks: Vec<Vec<usize>> = (0..samples.len())
        .collect::<Vec<_>>()
        .chunks(batch)
        .map(<[usize]>::to_vec)
        .collect();
    let run = |idx: &[usize]| -> Result<Prediction> {
        let images = image_batch(samples, idx)?;
        Ok(model.predict(&images)?)
    };
    let workers = options.threads.clamp(1, chunks.len());
    let parts: Vec<Result<Prediction>> = if workers == 1 {
        chunks.iter().map(|c| run(c)).collect()
    } else {
        let per_worker = chunks.len().div_ceil(workers);
        thread::scope(|s| {
            let handles: Vec<_> = chunks
                .chunks(per_worker)
                .map(|group| s.spawn(|| group.iter().map(|c| run(c)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("inference worker panicked"))
                .collect()
        })
    };
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let cat = |f: fn(&Prediction) -> &Tensor| -> Result<Tensor> {
        let ts: Vec<Tensor> = parts.iter().map(|p| f(p).clone()).collect();
        Ok(Tensor::stack_outer(&ts)?)
    };
    Ok(Prediction {
        attention: cat(|p| &p.attention)?,
        representation: cat(|p| &p.representation)?,
        logits: cat(|p| &p.logits)?,
    })
}
