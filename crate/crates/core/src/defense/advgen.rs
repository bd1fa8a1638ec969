//! Noise-aware adversarial sample generation and the composite training
//! loss.

use crate::datasim::{SarChip, I_MAX};
use crate::defense::spectral::SpatialMask;
use crate::defense::DefenseParams;
use crate::error::Result;
use crate::model::{backward, Batch, ModelParams};
use crate::numerics::{sample_speckle, RngStream};

/// Builds one adversarial sample:
/// `x_adv = x * G + xi * I_MAX * M_spatial`, clipped to `[0, I_MAX]`,
/// where `G` is a unit-mean Gamma speckle field (so the multiplicative term
/// is `x * (1 + N)` with centered noise `N = G - 1`) and the constant-
/// amplitude proxy trigger is localized entirely by the spatial mask.
/// The label is preserved.
pub fn generate_adversarial(
    chip: &SarChip,
    params: &DefenseParams,
    mask: &SpatialMask,
    rng: &mut RngStream,
) -> Result<SarChip> {
    let (h, w) = (chip.grid.height(), chip.grid.width());
    assert_eq!(
        (mask.grid.height(), mask.grid.width()),
        (h, w),
        "spatial mask dimensions must match the chip"
    );
    let speckle = sample_speckle(h, w, params.looks, rng)?;
    let mut grid = chip.grid.hadamard(&speckle);
    for (v, m) in grid.values_mut().iter_mut().zip(mask.grid.values()) {
        *v += params.xi * I_MAX * m;
    }
    grid.clip(0.0, I_MAX);
    Ok(SarChip {
        grid,
        label: chip.label,
    })
}

/// Composite objective `l(f(x), y) + beta * l(f(x_adv), y_adv)`: mean
/// cross-entropy on the clean batch plus `beta` times mean cross-entropy on
/// the adversarial batch.
pub fn composite_loss(
    params: &ModelParams,
    clean: &Batch,
    adversarial: Option<&Batch>,
    beta: f64,
) -> f64 {
    composite_loss_and_grad(params, clean, adversarial, beta).0
}

/// Composite loss together with its gradient.
pub fn composite_loss_and_grad(
    params: &ModelParams,
    clean: &Batch,
    adversarial: Option<&Batch>,
    beta: f64,
) -> (f64, Vec<f64>) {
    assert!(beta >= 0.0, "beta must be nonnegative");
    let (mut loss, mut grad) = backward(params, clean);
    if beta > 0.0 {
        if let Some(adv) = adversarial {
            let (adv_loss, adv_grad) = backward(params, adv);
            loss += beta * adv_loss;
            for (g, a) in grad.iter_mut().zip(&adv_grad) {
                *g += beta * a;
            }
        }
    }
    (loss, grad)
}
