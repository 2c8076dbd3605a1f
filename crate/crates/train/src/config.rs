use std::fmt;
use std::str::FromStr;

use cal_attention::{ModelConfig, DEFAULT_CLASSIFICATION_HEADS, DEFAULT_DEPTH};
use cal_counterfactual::{CounterfactualStrategy, StrategyKind};

use crate::error::{Result, TrainError};

/// What the optimizer minimizes on top of the factual cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Baseline,
    /// Adds `lambda_effect · CE(Y − Y(do(A=Ā)), y)`.
    Cal,
    /// Drops attention values during training.
    Dropout,
    /// Rewards spread-out attention maps.
    Entropy,
    /// Normalizes every attention map to unit ℓ2 norm, in training and inference.
    L2Norm,
}

impl Objective {
    pub const ALL: [&'static str; 5] = ["baseline", "cal", "dropout", "entropy", "l2norm"];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Baseline => "baseline",
            Objective::Cal => "cal",
            Objective::Dropout => "dropout",
            Objective::Entropy => "entropy",
            Objective::L2Norm => "l2norm",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Objective::Baseline),
            "cal" => Ok(Objective::Cal),
            "dropout" => Ok(Objective::Dropout),
            "entropy" => Ok(Objective::Entropy),
            "l2norm" => Ok(Objective::L2Norm),
            other => Err(TrainError::UnknownObjective(other.to_string())),
        }
    }
}

/// Salts that give each random process of a run its own stream family.
pub(crate) const COUNTERFACTUAL_SALT: u64 = 0x6361_6c5f_6366_0001;
pub(crate) const DROPOUT_SALT: u64 = 0x6361_6c5f_6470_0002;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The learning rate is multiplied by this every `lr_decay_interval` epochs.
    pub lr_decay: f64,
    pub lr_decay_interval: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub objective: Objective,
    pub strategy: StrategyKind,
    pub lambda_effect: f64,
    /// Drop probability of the attention-dropout objective.
    pub dropout_p: f64,
    /// Weight of the entropy term of the entropy objective.
    pub entropy_weight: f64,
    pub triplet_margin: f64,
    pub seed: u64,
    /// Backbone blocks of the model built for this run.
    pub depth: usize,
    /// Attention heads M of the model built for this run.
    pub heads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.01,
            lr_decay: 0.9,
            lr_decay_interval: 2,
            momentum: 0.9,
            weight_decay: 1e-5,
            objective: Objective::Baseline,
            strategy: StrategyKind::random(),
            lambda_effect: 1.0,
            dropout_p: 0.3,
            entropy_weight: 0.1,
            triplet_margin: 0.3,
            seed: 0,
            depth: DEFAULT_DEPTH,
            heads: DEFAULT_CLASSIFICATION_HEADS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.epochs == 0 || self.batch_size == 0 || self.lr_decay_interval == 0 {
            return fail("epochs, batch size and decay interval must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!(
                "decay factor must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.weight_decay >= 0.0) || !(self.entropy_weight >= 0.0) {
            return fail("weight decay and entropy weight must be nonnegative".into());
        }
        if !(self.lambda_effect >= 0.0 && self.lambda_effect.is_finite()) {
            return fail(format!(
                "lambda_effect must be nonnegative, got {}",
                self.lambda_effect
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!(
                "dropout probability must lie in [0, 1), got {}",
                self.dropout_p
            ));
        }
        if !(self.triplet_margin > 0.0) {
            return fail(format!(
                "triplet margin must be positive, got {}",
                self.triplet_margin
            ));
        }
        if self.depth == 0 || self.heads == 0 {
            return fail("depth and head count must be positive".into());
        }
        let strategy = self.counterfactual_strategy()?;
        if self.objective == Objective::Cal && self.batch_size < strategy.min_batch() {
            return fail(format!(
                "the {} strategy needs a batch of at least {} samples (N >= 2), got batch size {}",
                self.strategy,
                strategy.min_batch(),
                self.batch_size
            ));
        }
        Ok(())
    }

    pub fn counterfactual_strategy(&self) -> Result<CounterfactualStrategy> {
        Ok(CounterfactualStrategy::new(
            self.strategy,
            self.seed ^ COUNTERFACTUAL_SALT,
        )?)
    }

    /// Learning rate in force during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_interval) as i32)
    }

    /// Architecture of the model this run trains for `classes` labels.
    pub fn model_config(&self, classes: usize) -> ModelConfig {
        ModelConfig {
            depth: self.depth,
            heads: self.heads,
            classes,
            normalize_attention: self.objective == Objective::L2Norm,
            seed: self.seed,
        }
    }

    /// `key=value` lines for every field, in a fixed order.
    pub fn to_lines(&self) -> Vec<String> {
        vec![
            format!("epochs={}", self.epochs),
            format!("batch_size={}", self.batch_size),
            format!("learning_rate={}", self.learning_rate),
            format!("lr_decay={}", self.lr_decay),
            format!("lr_decay_interval={}", self.lr_decay_interval),
            format!("momentum={}", self.momentum),
            format!("weight_decay={}", self.weight_decay),
            format!("objective={}", self.objective),
            format!("strategy={}", self.strategy),
            format!("lambda_effect={}", self.lambda_effect),
            format!("dropout_p={}", self.dropout_p),
            format!("entropy_weight={}", self.entropy_weight),
            format!("triplet_margin={}", self.triplet_margin),
            format!("seed={}", self.seed),
            format!("depth={}", self.depth),
            format!("heads={}", self.heads),
        ]
    }

    /// Sets one field by key. Returns `false` for unknown keys.
    pub fn set_field(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| TrainError::Config(format!("cannot parse {key}={value}")))
        }
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "lr_decay_interval" => self.lr_decay_interval = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "objective" => self.objective = value.trim().parse()?,
            "strategy" => self.strategy = value.trim().parse()?,
            "lambda_effect" => self.lambda_effect = parse(key, value)?,
            "dropout_p" => self.dropout_p = parse(key, value)?,
            "entropy_weight" => self.entropy_weight = parse(key, value)?,
            "triplet_margin" => self.triplet_margin = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
