use cal_attention::AttentionModel;

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + (g + λ·θ)`, `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(model: &AttentionModel, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: model
                .params()
                .iter()
                .map(|p| vec![0.0; p.tensor.numel()])
                .collect(),
        }
    }

    /// Applies one update; `grads[i]` is `None` for parameters without gradient.
    pub fn step(&mut self, model: &mut AttentionModel, grads: &[Option<Vec<f64>>], lr: f64) {
        for ((param, grad), vel) in model
            .params_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.velocity)
        {
            let theta = param.tensor.data_mut();
            for i in 0..theta.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]) + self.weight_decay * theta[i];
                vel[i] = self.momentum * vel[i] + g;
                theta[i] -= lr * vel[i];
            }
        }
    }
}
