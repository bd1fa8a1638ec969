//! SGD with momentum, weight decay, and a cosine learning-rate schedule over
//! the global rounds.

use crate::model::ModelParams;

/// Optimizer state for one local training session.
#[derive(Debug, Clone)]
pub struct OptState {
    pub momentum_buf: Vec<f64>,
    /// Zero-based global round index driving the cosine schedule.
    pub round: usize,
    pub total_rounds: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptState {
    pub fn new(
        param_count: usize,
        round: usize,
        total_rounds: usize,
        base_lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Self {
        Self {
            momentum_buf: vec![0.0; param_count],
            round,
            total_rounds,
            base_lr,
            momentum,
            weight_decay,
        }
    }

    /// `base * 0.5 * (1 + cos(pi * round / total))`.
    pub fn learning_rate(&self) -> f64 {
        let frac = self.round as f64 / self.total_rounds as f64;
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// One SGD step: `buf <- momentum * buf + grad + weight_decay * params`,
/// then `params <- params - lr * buf`.
pub fn sgd_step(params: &mut ModelParams, gradient: &[f64], opt: &mut OptState) {
    assert_eq!(params.len(), gradient.len(), "gradient length mismatch");
    assert_eq!(params.len(), opt.momentum_buf.len(), "buffer length mismatch");
    let lr = opt.learning_rate();
    for ((p, g), b) in params
        .flat
        .iter_mut()
        .zip(gradient)
        .zip(&mut opt.momentum_buf)
    {
        *b = opt.momentum * *b + g + opt.weight_decay * *p;
        *p -= lr * *b;
    }
}
