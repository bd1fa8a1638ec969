//! Dynamic health assessment: per-client scores from update drift and
//! prediction drift, pruned-and-normalized aggregation weights, and the
//! round-to-round adaptation of defense parameters.

use crate::defense::DefenseParams;
use crate::model::ParamUpdate;
use crate::numerics::{kl_divergence, percentile};

/// Health score `H = gamma * ||d_r - d_{r-1}||_2 + delta * mean_k
/// KL(f_r[k], f_{r-1}[k])` over the probe samples.
pub fn health_score(
    current: &ParamUpdate,
    previous: &ParamUpdate,
    probe_now: &[Vec<f64>],
    probe_prev: &[Vec<f64>],
    gamma: f64,
    delta: f64,
) -> f64 {
    assert_eq!(
        current.delta.len(),
        previous.delta.len(),
        "update length mismatch"
    );
    assert_eq!(
        probe_now.len(),
        probe_prev.len(),
        "probe output count mismatch"
    );
    assert!(!probe_now.is_empty(), "probe outputs must be nonempty");
    let drift = current
        .delta
        .iter()
        .zip(&previous.delta)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let divergence = probe_now
        .iter()
        .zip(probe_prev)
        .map(|(now, prev)| kl_divergence(now, prev))
        .sum::<f64>()
        / probe_now.len() as f64;
    gamma * drift + delta * divergence
}

/// Weights with their pruning diagnostics for one round.
#[derive(Debug, Clone)]
pub struct HealthWeights {
    /// `(client_id, weight)` in the input order; weights sum to 1.
    pub weights: Vec<(usize, f64)>,
    /// The percentile threshold used for pruning.
    pub tau: f64,
    /// Number of pruned (zero-weight) clients before any fallback.
    pub pruned: usize,
    /// True when every client was pruned and uniform weights were used.
    pub fallback_uniform: bool,
}

/// Converts health scores into aggregation weights:
/// `w_i = exp(-gamma * H_i)` when `H_i < tau` (the configured percentile of
/// the scores), zero otherwise, then normalized. If everything is pruned the
/// weights fall back to uniform and the diagnostic flag is raised.
pub fn health_weights(scores: &[(usize, f64)], gamma: f64, tau_percentile: u8) -> HealthWeights {
    assert!(!scores.is_empty(), "health_weights over empty score set");
    let values: Vec<f64> = scores.iter().map(|(_, h)| *h).collect();
    let tau = percentile(&values, tau_percentile as f64);
    let mut raw: Vec<f64> = values
        .iter()
        .map(|&h| if h < tau { (-gamma * h).exp() } else { 0.0 })
        .collect();
    let pruned = raw.iter().filter(|w| **w == 0.0).count();
    let total: f64 = raw.iter().sum();
    let fallback_uniform = total <= 0.0;
    if fallback_uniform {
        raw = vec![1.0 / scores.len() as f64; scores.len()];
    } else {
        for w in &mut raw {
            *w /= total;
        }
    }
    HealthWeights {
        weights: scores
            .iter()
            .map(|(id, _)| *id)
            .zip(raw)
            .collect(),
        tau,
        pruned,
        fallback_uniform,
    }
}

/// Round diagnostics feeding the parameter adaptation rule.
#[derive(Debug, Clone, Copy)]
pub struct RoundFeedback {
    /// Fraction of selected clients pruned by the health threshold.
    pub pruned_fraction: f64,
    /// Across-client variance of the adversarial loss this round.
    pub adv_loss_variance: f64,
    /// The same variance from the previous round, if any.
    pub previous_variance: Option<f64>,
}

/// Deterministic adaptation: heavy pruning relaxes the percentile one step
/// toward 98; rising adversarial-loss variance strengthens the injection
/// (`xi` up to 0.15) and sharpens the mask (`zeta` down to 1.0); otherwise
/// the injection decays toward its floor. `gamma` and `delta` are held
/// fixed.
pub fn adapt_params(params: &DefenseParams, feedback: &RoundFeedback) -> DefenseParams {
    let mut next = *params;
    if feedback.pruned_fraction > 0.5 {
        next.tau_percentile = match next.tau_percentile {
            90 => 95,
            _ => 98,
        };
    }
    let variance_rose = feedback
        .previous_variance
        .is_some_and(|prev| feedback.adv_loss_variance > prev);
    if variance_rose {
        next.xi = (1.1 * next.xi).min(0.15);
        next.zeta = (0.9 * next.zeta).max(1.0);
    } else {
        next.xi = (0.95 * next.xi).max(0.05);
    }
    next
}
