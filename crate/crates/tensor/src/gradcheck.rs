//! Central-difference gradient verification.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

fn evaluate<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.constant(x.detached());
    let out = f(&mut g, v)?;
    let value = g.value(out);
    if value.numel() != 1 {
        return Err(TensorError::NonScalarLoss(value.shape().to_vec()));
    }
    Ok(value.item())
}

/// Analytic gradient of `f` at `x` via [`Graph::backward`].
pub fn analytic_gradient<F>(f: &F, x: &Tensor) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.leaf(x.detached().with_requires_grad(true));
    let out = f(&mut g, v)?;
    g.backward(out)?;
    Ok(g.grad(v)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]))
}

/// Compares the analytic gradient of the scalar function `f` at `x` with
/// central differences and returns the largest relative error
/// `|a − n| / max(1e-8, |a| + |n|)` over all coordinates.
pub fn check_gradients<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(TensorError::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let first = evaluate(&f, x)?;
    let second = evaluate(&f, x)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }
    let analytic = analytic_gradient(&f, x)?;
    let mut probe = x.detached();
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
