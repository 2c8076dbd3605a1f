use std::fmt;
use std::str::FromStr;

use cal_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CounterfactualError, Result};

/// How counterfactual attention maps are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind {
    /// Every value i.i.d. uniform on `[lo, hi)`.
    Random { lo: f64, hi: f64 },
    /// Each sample's maps replaced by the constant mean of all its maps.
    Uniform,
    /// Each sample's maps subtracted from that sample's maximum value.
    Reversed,
    /// Maps permuted across the batch.
    Shuffle,
}

impl StrategyKind {
    pub const ALL: [&'static str; 4] = ["random", "uniform", "reversed", "shuffle"];

    pub fn random() -> Self {
        StrategyKind::Random { lo: 0.0, hi: 2.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Random { .. } => "random",
            StrategyKind::Uniform => "uniform",
            StrategyKind::Reversed => "reversed",
            StrategyKind::Shuffle => "shuffle",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = CounterfactualError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(StrategyKind::random()),
            "uniform" => Ok(StrategyKind::Uniform),
            "reversed" => Ok(StrategyKind::Reversed),
            "shuffle" => Ok(StrategyKind::Shuffle),
            other => Err(CounterfactualError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterfactualStrategy {
    pub kind: StrategyKind,
    pub seed: u64,
}

impl CounterfactualStrategy {
    pub fn new(kind: StrategyKind, seed: u64) -> Result<Self> {
        if let StrategyKind::Random { lo, hi } = kind {
            if !(lo < hi) || lo < 0.0 || !hi.is_finite() {
                return Err(CounterfactualError::InvalidBounds { lo, hi });
            }
        }
        Ok(Self { kind, seed })
    }

    /// Smallest batch this strategy can intervene on.
    pub fn min_batch(&self) -> usize {
        match self.kind {
            StrategyKind::Shuffle => 2,
            _ => 1,
        }
    }
}

/// Independent RNG stream for call number `step` under `seed`.
pub fn rng_stream(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Draws counterfactual maps `Ā` for observed maps `a` (`N×M×H×W`).
///
/// The result is a plain tensor: it has no connection to whatever produced
/// `a`, so anything built on it cannot pass gradient back into the
/// attention head. `step` selects the RNG stream, so the same
/// `(seed, step, a)` always yields the same `Ā`.
pub fn generate_counterfactual(
    a: &Tensor,
    strategy: &CounterfactualStrategy,
    step: u64,
) -> Result<Tensor> {
    if a.rank() != 4 {
        return Err(CounterfactualError::Shape(format!(
            "attention maps must be N×M×H×W, got {:?}",
            a.shape()
        )));
    }
    if a.min() < 0.0 {
        return Err(CounterfactualError::NegativeAttention);
    }
    let n = a.shape()[0];
    let per_sample = a.numel() / n;
    let mut rng = rng_stream(strategy.seed, step);
    let data: Vec<f64> = match strategy.kind {
        StrategyKind::Random { lo, hi } => (0..a.numel()).map(|_| rng.gen_range(lo..hi)).collect(),
        StrategyKind::Uniform => a
            .data()
            .chunks(per_sample)
            .flat_map(|s| {
                let mean = s.iter().sum::<f64>() / per_sample as f64;
                std::iter::repeat(mean).take(per_sample)
            })
            .collect(),
        StrategyKind::Reversed => a
            .data()
            .chunks(per_sample)
            .flat_map(|s| {
                let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                s.iter().map(move |v| max - v)
            })
            .collect(),
        StrategyKind::Shuffle => {
            if n < 2 {
                return Err(CounterfactualError::ShuffleNeedsBatch(n));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
                .iter()
                .flat_map(|&src| {
                    a.data()[src * per_sample..(src + 1) * per_sample]
                        .iter()
                        .copied()
                })
                .collect()
        }
    };
    Ok(Tensor::new(a.shape().to_vec(), data)?)
}
