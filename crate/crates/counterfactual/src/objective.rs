use cal_attention::{AttentionMaps, AttentionModel, BoundParams, FeatureMaps};
use cal_tensor::{Graph, Tensor, Var};
use rand::Rng;

use crate::error::{CounterfactualError, Result};
use crate::strategy::rng_stream;

/// Prediction under the intervention `do(A = Ā)` with the features held fixed.
///
/// Reuses the factual pooling, normalization and classifier parameters in
/// `bound`. `a_bar` enters the graph as a constant, so gradients reach the
/// classifier and (through `x`) the backbone, never the attention head.
pub fn counterfactual_predict(
    model: &AttentionModel,
    g: &mut Graph,
    bound: &BoundParams,
    x: FeatureMaps,
    a_bar: &Tensor,
) -> Result<Var> {
    let xs = g.shape(x.var());
    let expected = [xs[0], model.config().heads, xs[2], xs[3]];
    if a_bar.shape() != expected {
        return Err(CounterfactualError::Shape(format!(
            "counterfactual maps {:?} do not match features {xs:?} with {} heads",
            a_bar.shape(),
            model.config().heads
        )));
    }
    let a_bar = AttentionMaps::constant(g, a_bar.detached())?;
    let h = model.pool_and_classify_input(g, x, a_bar)?;
    Ok(model.classify(g, bound, h)?)
}

/// Factual minus counterfactual logits.
#[derive(Debug, Clone, Copy)]
pub struct EffectLogits(Var);

impl EffectLogits {
    pub fn var(self) -> Var {
        self.0
    }
}

/// `Y_effect = Y(A=A, X=X) − Y(do(A=Ā), X=X)` for a single draw of `Ā`.
pub fn compute_effect(
    g: &mut Graph,
    y_factual: Var,
    y_counterfactual: Var,
) -> Result<EffectLogits> {
    if g.shape(y_factual) != g.shape(y_counterfactual) {
        return Err(CounterfactualError::Shape(format!(
            "factual logits {:?} vs counterfactual logits {:?}",
            g.shape(y_factual),
            g.shape(y_counterfactual)
        )));
    }
    Ok(EffectLogits(g.sub(y_factual, y_counterfactual)?))
}

/// `lambda_effect · CE(Y_effect, y) + CE(Y, y)`.
pub fn cal_loss(
    g: &mut Graph,
    effect: EffectLogits,
    y_factual: Var,
    labels: &[usize],
    lambda_effect: f64,
) -> Result<Var> {
    if !(lambda_effect >= 0.0) || !lambda_effect.is_finite() {
        return Err(CounterfactualError::InvalidLambda(lambda_effect));
    }
    let effect_ce = g.softmax_cross_entropy(effect.0, labels)?;
    let factual_ce = g.softmax_cross_entropy(y_factual, labels)?;
    let weighted = g.scale(effect_ce, lambda_effect);
    Ok(g.add(weighted, factual_ce)?)
}

/// Inverted dropout on attention values: each entry zeroed with probability
/// `p`, survivors scaled by `1/(1−p)`. Training-time only.
pub fn attention_dropout(
    g: &mut Graph,
    a: AttentionMaps,
    p: f64,
    seed: u64,
    step: u64,
) -> Result<AttentionMaps> {
    if !(0.0..1.0).contains(&p) {
        return Err(CounterfactualError::InvalidProbability(p));
    }
    if p == 0.0 {
        return Ok(a);
    }
    let mut rng = rng_stream(seed, step);
    let keep = 1.0 / (1.0 - p);
    let shape = g.shape(a.var()).to_vec();
    let mask = Tensor::from_fn(&shape, |_| if rng.gen_bool(p) { 0.0 } else { keep })?;
    let mask = g.constant(mask);
    let dropped = g.mul(a.var(), mask)?;
    Ok(attention_from(g, dropped))
}

/// Mean over heads and samples of `Σ p log p`, where `p` is each map
/// normalized to a distribution; minimizing it maximizes attention entropy.
pub fn entropy_regularizer(g: &mut Graph, a: AttentionMaps) -> Result<Var> {
    Ok(g.neg_entropy(a.var())?)
}

/// Rescales each head's spatial map to unit ℓ2 norm; zero maps stay zero.
pub fn attention_l2_normalize(g: &mut Graph, a: AttentionMaps) -> Result<AttentionMaps> {
    let s = g.shape(a.var()).to_vec();
    let flat = g.reshape(a.var(), &[s[0] * s[1], s[2] * s[3]])?;
    let unit = g.l2_normalize_rows(flat);
    let back = g.reshape(unit, &s)?;
    Ok(attention_from(g, back))
}

fn attention_from(g: &Graph, v: Var) -> AttentionMaps {
    // AttentionMaps only wraps handles; the values stay nonnegative here.
    debug_assert!(g.value(v).min() >= 0.0);
    AttentionMaps::from_var(v)
}
