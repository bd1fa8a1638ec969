//! The three defense mechanisms: cross-client frequency-domain inversion of
//! parameter updates into a spectral anomaly mask (FDCI), noise-aware
//! adversarial sample generation with a composite training loss (NAAT), and
//! dynamic health scoring with pruned-and-normalized aggregation weights
//! plus round-to-round parameter adaptation (DHAT).

mod advgen;
mod health;
mod spectral;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub use advgen::{composite_loss, composite_loss_and_grad, generate_adversarial};
pub use health::{adapt_params, health_score, health_weights, HealthWeights, RoundFeedback};
pub use spectral::{
    discrepancy, energy_map, median_filter_updates, spatialize_mask, threshold_mask,
    update_to_grid, FrequencyMask, SpatialMask,
};

/// Tunable defense parameters; several are adapted round to round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseParams {
    /// Mask sensitivity: positions with discrepancy above `zeta * mean` are
    /// flagged.
    pub zeta: f64,
    /// Weight of the update-drift term in the health score, and the decay
    /// rate inside `exp(-gamma * H)`.
    pub gamma: f64,
    /// Weight of the prediction-drift (KL) term in the health score.
    pub delta: f64,
    /// Adversarial injection strength.
    pub xi: f64,
    /// Adversarial loss weight in the composite objective.
    pub beta: f64,
    /// Wavelet decomposition depth.
    pub levels: usize,
    /// Equivalent number of looks of the adversarial speckle.
    pub looks: f64,
    /// Health pruning percentile, one of {90, 95, 98}.
    pub tau_percentile: u8,
}

impl Default for DefenseParams {
    fn default() -> Self {
        Self {
            zeta: 1.2,
            gamma: 1.0,
            delta: 1.0,
            xi: 0.05,
            beta: 0.5,
            levels: 3,
            looks: 3.0,
            tau_percentile: 95,
        }
    }
}

impl DefenseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0) {
            return Err(SimError::Config(format!("zeta must be > 0, got {}", self.zeta)));
        }
        if self.gamma < 0.0 || self.delta < 0.0 {
            return Err(SimError::Config("gamma and delta must be >= 0".into()));
        }
        if !(0.0..=0.5).contains(&self.xi) {
            return Err(SimError::Config(format!(
                "xi must lie in [0, 0.5], got {}",
                self.xi
            )));
        }
        if self.beta < 0.0 {
            return Err(SimError::Config("beta must be >= 0".into()));
        }
        if self.levels == 0 {
            return Err(SimError::Config("wavelet depth must be >= 1".into()));
        }
        if !(self.looks > 0.0) {
            return Err(SimError::Config("looks must be positive".into()));
        }
        if ![90, 95, 98].contains(&self.tau_percentile) {
            return Err(SimError::Config(format!(
                "tau percentile must be 90, 95 or 98, got {}",
                self.tau_percentile
            )));
        }
        Ok(())
    }
}
