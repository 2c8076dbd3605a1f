use cal_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AttentionError, Result};

/// Output channels of successive backbone blocks; blocks past the end reuse the last entry.
pub const CHANNEL_SCHEDULE: [usize; 4] = [16, 32, 64, 64];
pub const IMAGE_CHANNELS: usize = 3;
pub const DEFAULT_DEPTH: usize = 4;
pub const DEFAULT_CLASSIFICATION_HEADS: usize = 32;
pub const DEFAULT_RETRIEVAL_HEADS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of stride-2 conv blocks in the backbone.
    pub depth: usize,
    /// Attention head count M.
    pub heads: usize,
    /// Class count K.
    pub classes: usize,
    /// Rescale each attention map to unit ℓ2 norm (the normalization baseline).
    pub normalize_attention: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(classes: usize) -> Self {
        Self {
            depth: DEFAULT_DEPTH,
            heads: DEFAULT_CLASSIFICATION_HEADS,
            classes,
            normalize_attention: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(AttentionError::Config(
                "backbone depth must be at least 1".into(),
            ));
        }
        if self.heads == 0 {
            return Err(AttentionError::Config(
                "head count M must be at least 1".into(),
            ));
        }
        if self.classes < 2 {
            return Err(AttentionError::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn block_channels(&self) -> Vec<usize> {
        (0..self.depth)
            .map(|i| CHANNEL_SCHEDULE[i.min(CHANNEL_SCHEDULE.len() - 1)])
            .collect()
    }

    /// Channel count C of the feature maps.
    pub fn feature_channels(&self) -> usize {
        *self.block_channels().last().expect("depth >= 1")
    }

    /// Width M·C of the global representation.
    pub fn representation_width(&self) -> usize {
        self.heads * self.feature_channels()
    }

    /// Required divisor of the input image side.
    pub fn downsample_factor(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Backbone `f`, attention head `M(·)` and classifier `C`.
///
/// Parameters are stored in a fixed order: `backbone.{i}.weight`,
/// `backbone.{i}.bias` for each block, then `head.weight`, `head.bias`,
/// `classifier.weight`, `classifier.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionModel {
    config: ModelConfig,
    params: Vec<Param>,
}

/// Parameter handles for one graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Substitutes the handle of parameter `index`, e.g. to differentiate
    /// with respect to a single parameter tensor.
    pub fn with_override(mut self, index: usize, var: Var) -> Self {
        self.vars[index] = var;
        self
    }
}

/// `N×C×H×W` backbone output X.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMaps(pub(crate) Var);

/// `N×M×H×W` nonnegative attention maps A.
#[derive(Debug, Clone, Copy)]
pub struct AttentionMaps(pub(crate) Var);

/// `N×(M·C)` unit-norm representation h.
#[derive(Debug, Clone, Copy)]
pub struct GlobalRepresentation(pub(crate) Var);

impl FeatureMaps {
    /// Treats an existing `N×C×H×W` node as feature maps.
    pub fn from_var(var: Var) -> Self {
        Self(var)
    }

    pub fn var(self) -> Var {
        self.0
    }
}

impl AttentionMaps {
    /// Treats an existing nonnegative `N×M×H×W` node as attention maps.
    pub fn from_var(var: Var) -> Self {
        Self(var)
    }

    pub fn var(self) -> Var {
        self.0
    }

    /// Wraps a fixed tensor as attention maps with no gradient path.
    pub fn constant(g: &mut Graph, maps: Tensor) -> Result<Self> {
        if maps.rank() != 4 {
            return Err(AttentionError::Mismatch {
                what: "attention maps rank",
                expected: "N×M×H×W".into(),
                actual: format!("{:?}", maps.shape()),
            });
        }
        if maps.min() < 0.0 {
            return Err(AttentionError::Config(
                "attention maps must be nonnegative".into(),
            ));
        }
        Ok(Self(g.constant(maps)))
    }
}

impl GlobalRepresentation {
    pub fn var(self) -> Var {
        self.0
    }
}

/// Intermediates of one factual forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub features: FeatureMaps,
    pub attention: AttentionMaps,
    pub representation: GlobalRepresentation,
    pub logits: Var,
}

/// Constant subtracted from every input pixel before the first block.
pub const INPUT_MEAN: f64 = 0.5;

fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound)).expect("nonempty shape")
}

/// He-uniform bound for weights feeding a ReLU.
fn relu_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn bias_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// `√3`: unit per-weight variance, as the classifier input has unit norm.
const CLASSIFIER_BOUND: f64 = 1.732_050_807_568_877_2;

impl AttentionModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        let mut in_ch = IMAGE_CHANNELS;
        for (i, out_ch) in config.block_channels().into_iter().enumerate() {
            let fan_in = in_ch * 9;
            params.push(Param {
                name: format!("backbone.{i}.weight"),
                tensor: uniform_init(&mut rng, &[out_ch, in_ch, 3, 3], relu_bound(fan_in)),
            });
            params.push(Param {
                name: format!("backbone.{i}.bias"),
                tensor: uniform_init(&mut rng, &[out_ch], bias_bound(fan_in)),
            });
            in_ch = out_ch;
        }
        let (m, k, width) = (config.heads, config.classes, config.representation_width());
        params.push(Param {
            name: "head.weight".into(),
            tensor: uniform_init(&mut rng, &[m, in_ch, 1, 1], relu_bound(in_ch)),
        });
        params.push(Param {
            name: "head.bias".into(),
            tensor: uniform_init(&mut rng, &[m], bias_bound(in_ch)),
        });
        params.push(Param {
            name: "classifier.weight".into(),
            tensor: uniform_init(&mut rng, &[width, k], CLASSIFIER_BOUND),
        });
        params.push(Param {
            name: "classifier.bias".into(),
            tensor: uniform_init(&mut rng, &[k], bias_bound(width)),
        });
        Ok(Self { config, params })
    }

    /// Assembles a model from named tensors, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: Vec<Param>) -> Result<Self> {
        let reference = Self::new(config.clone())?;
        if params.len() != reference.params.len() {
            return Err(AttentionError::Mismatch {
                what: "parameter count",
                expected: reference.params.len().to_string(),
                actual: params.len().to_string(),
            });
        }
        for (p, r) in params.iter().zip(&reference.params) {
            if p.name != r.name || p.tensor.shape() != r.tensor.shape() {
                return Err(AttentionError::Mismatch {
                    what: "parameter",
                    expected: format!("{} {:?}", r.name, r.tensor.shape()),
                    actual: format!("{} {:?}", p.name, p.tensor.shape()),
                });
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.tensor)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.tensor)
    }

    fn head_index(&self) -> usize {
        2 * self.config.depth
    }

    /// Index range of the attention-head parameters within [`AttentionModel::params`].
    pub fn head_param_range(&self) -> std::ops::Range<usize> {
        self.head_index()..self.head_index() + 2
    }

    /// Puts every parameter into `g`; `trainable` decides whether they collect gradients.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.tensor.detached().with_requires_grad(trainable)))
            .collect();
        BoundParams { vars }
    }

    /// Adds the gradients gathered in `g` into each parameter's grad buffer.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &BoundParams) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(grad) = g.grad(v) {
                p.tensor.accumulate_grad(grad);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn extract_features(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        images: Var,
    ) -> Result<FeatureMaps> {
        let s = g.shape(images).to_vec();
        if s.len() != 4 || s[1] != IMAGE_CHANNELS {
            return Err(AttentionError::Mismatch {
                what: "image batch shape",
                expected: format!("N×{IMAGE_CHANNELS}×H×W"),
                actual: format!("{s:?}"),
            });
        }
        let divisor = self.config.downsample_factor();
        if s[2] % divisor != 0 || s[3] % divisor != 0 {
            return Err(AttentionError::IndivisibleInput {
                height: s[2],
                width: s[3],
                divisor,
            });
        }
        let mean = g.constant(Tensor::full(&s, INPUT_MEAN)?);
        let mut x = g.sub(images, mean)?;
        for i in 0..self.config.depth {
            let (w, b) = (bound.vars[2 * i], bound.vars[2 * i + 1]);
            let c = g.conv2d(x, w, b, 2, 1)?;
            x = g.relu(c);
        }
        Ok(FeatureMaps(x))
    }

    /// `A = relu(conv1x1(X))`, optionally rescaled per map to unit ℓ2 norm.
    pub fn compute_attention(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        x: FeatureMaps,
    ) -> Result<AttentionMaps> {
        let s = g.shape(x.0).to_vec();
        let c = self.config.feature_channels();
        if s.len() != 4 || s[1] != c {
            return Err(AttentionError::Mismatch {
                what: "feature channels for the attention head",
                expected: c.to_string(),
                actual: format!("{s:?}"),
            });
        }
        let h = self.head_index();
        let z = g.conv2d(x.0, bound.vars[h], bound.vars[h + 1], 1, 0)?;
        let mut a = g.relu(z);
        if self.config.normalize_attention {
            let (n, m) = (s[0], self.config.heads);
            let flat = g.reshape(a, &[n * m, s[2] * s[3]])?;
            let unit = g.l2_normalize_rows(flat);
            a = g.reshape(unit, &[n, m, s[2], s[3]])?;
        }
        Ok(AttentionMaps(a))
    }

    pub fn classify(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        h: GlobalRepresentation,
    ) -> Result<Var> {
        let width = g.shape(h.0)[1];
        if width != self.config.representation_width() {
            return Err(AttentionError::Mismatch {
                what: "representation width",
                expected: self.config.representation_width().to_string(),
                actual: width.to_string(),
            });
        }
        let k = self.head_index() + 2;
        Ok(g.linear(h.0, bound.vars[k], bound.vars[k + 1])?)
    }

    /// Factual branch: features, attention, representation and logits `Y(A=A, X=X)`.
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, images: Var) -> Result<Forward> {
        let features = self.extract_features(g, bound, images)?;
        let attention = self.compute_attention(g, bound, features)?;
        let representation = self.pool_and_classify_input(g, features, attention)?;
        let logits = self.classify(g, bound, representation)?;
        Ok(Forward {
            features,
            attention,
            representation,
            logits,
        })
    }

    /// Pools `x` under `a` and normalizes: the part of the pipeline shared by
    /// the factual branch and any branch that substitutes its own attention.
    pub fn pool_and_classify_input(
        &self,
        g: &mut Graph,
        x: FeatureMaps,
        a: AttentionMaps,
    ) -> Result<GlobalRepresentation> {
        if g.shape(a.0)[1] != self.config.heads {
            return Err(AttentionError::Mismatch {
                what: "attention head count",
                expected: self.config.heads.to_string(),
                actual: g.shape(a.0)[1].to_string(),
            });
        }
        let parts = attention_pool(g, x, a)?;
        global_representation(g, parts)
    }

    /// Gradient-free forward pass returning plain tensors.
    pub fn predict(&self, images: &Tensor) -> Result<Prediction> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let input = g.constant(images.detached());
        let out = self.forward(&mut g, &bound, input)?;
        Ok(Prediction {
            attention: g.take(out.attention.0),
            representation: g.take(out.representation.0),
            logits: g.take(out.logits),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub attention: Tensor,
    pub representation: Tensor,
    pub logits: Tensor,
}

/// Part representations `h_i = φ(X * A_i)`, shape `N×M×C`.
pub fn attention_pool(g: &mut Graph, x: FeatureMaps, a: AttentionMaps) -> Result<Var> {
    let (xs, as_) = (g.shape(x.0), g.shape(a.0));
    if xs[0] != as_[0] || xs[2..] != as_[2..] {
        return Err(AttentionError::Mismatch {
            what: "attention maps vs feature maps (N, H, W)",
            expected: format!("{xs:?}"),
            actual: format!("{as_:?}"),
        });
    }
    Ok(g.attention_pool(x.0, a.0)?)
}

/// Concatenates the `M` part vectors of each sample and ℓ2-normalizes the result.
/// All-zero rows stay zero.
pub fn global_representation(g: &mut Graph, parts: Var) -> Result<GlobalRepresentation> {
    let s = g.shape(parts).to_vec();
    if s.len() != 3 {
        return Err(AttentionError::Mismatch {
            what: "part representations",
            expected: "N×M×C".into(),
            actual: format!("{s:?}"),
        });
    }
    let flat = g.reshape(parts, &[s[0], s[1] * s[2]])?;
    let h = g.l2_normalize_rows(flat);
    let zero_rows = g
        .value(flat)
        .data()
        .chunks(s[1] * s[2])
        .filter(|r| r.iter().all(|&v| v == 0.0))
        .count();
    if zero_rows > 0 && g.requires_grad(flat) {
        log::warn!("{zero_rows} all-zero representation rows left unnormalized");
    }
    Ok(GlobalRepresentation(h))
}
