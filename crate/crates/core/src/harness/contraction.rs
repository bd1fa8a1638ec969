//! Verifies the predicted geometric contraction of the federated loop on a
//! quadratic surrogate.
//!
//! Each client holds `L_i(theta) = 1/2 (theta - a_i)^T A (theta - a_i)` with
//! a shared symmetric positive-definite curvature `A`. With one local
//! gradient step per round, equal weights, and no attackers, the per-round
//! suboptimality ratio must stay below `rho = 1 - 2*eta*mu + 2*L*eta^2*mu`
//! whenever `eta < 1/(2L)`.

use rand::Rng;

use crate::aggregation::{fedavg, Contribution};
use crate::error::{Result, SimError};
use crate::numerics::RngStream;

/// Per-round suboptimality ratios against the theoretical factor.
#[derive(Debug, Clone)]
pub struct ContractionReport {
    pub ratios: Vec<f64>,
    pub rho: f64,
    pub pass: bool,
}

fn mat_vec(matrix: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    matrix
        .iter()
        .map(|row| row.iter().zip(v).map(|(m, x)| m * x).sum())
        .collect()
}

fn quadratic(matrix: &[Vec<f64>], theta: &[f64], target: &[f64]) -> f64 {
    let diff: Vec<f64> = theta.iter().zip(target).map(|(t, a)| t - a).collect();
    0.5 * mat_vec(matrix, &diff)
        .iter()
        .zip(&diff)
        .map(|(m, d)| m * d)
        .sum::<f64>()
}

/// Runs `rounds` federated rounds on the quadratic surrogate from `start`
/// and reports every suboptimality ratio. `mu` and `smoothness` are the
/// extreme eigenvalues of `curvature`. Rounds where the suboptimality has
/// already collapsed to zero report a ratio of 0.
pub fn verify_contraction(
    eta: f64,
    targets: &[Vec<f64>],
    curvature: &[Vec<f64>],
    mu: f64,
    smoothness: f64,
    start: &[f64],
    rounds: usize,
) -> Result<ContractionReport> {
    if !(eta > 0.0 && eta < 1.0 / (2.0 * smoothness)) {
        return Err(SimError::Config(format!(
            "step size {eta} violates eta < 1/(2L) = {}",
            1.0 / (2.0 * smoothness)
        )));
    }
    assert!(!targets.is_empty(), "need at least one client target");
    let dim = start.len();
    assert!(
        targets.iter().all(|a| a.len() == dim) && curvature.len() == dim,
        "dimension mismatch"
    );

    let n = targets.len() as f64;
    // the optimum of the equally weighted objective is the target mean
    let optimum: Vec<f64> = (0..dim)
        .map(|k| targets.iter().map(|a| a[k]).sum::<f64>() / n)
        .collect();
    let objective = |theta: &[f64]| -> f64 {
        targets
            .iter()
            .map(|a| quadratic(curvature, theta, a))
            .sum::<f64>()
            / n
    };
    let floor = objective(&optimum);

    let rho = 1.0 - 2.0 * eta * mu + 2.0 * smoothness * eta * eta * mu;
    let mut theta = start.to_vec();
    let mut suboptimality = objective(&theta) - floor;
    let mut ratios = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        // one local gradient step per client, then equal-weight aggregation
        let locals: Vec<Vec<f64>> = targets
            .iter()
            .map(|a| {
                let diff: Vec<f64> = theta.iter().zip(a).map(|(t, x)| t - x).collect();
                let grad = mat_vec(curvature, &diff);
                theta.iter().zip(&grad).map(|(t, g)| t - eta * g).collect()
            })
            .collect();
        let contributions: Vec<Contribution> = locals
            .iter()
            .enumerate()
            .map(|(id, p)| Contribution {
                client_id: id,
                params: p,
                shard_size: 1,
                weight: 0.0,
            })
            .collect();
        theta = fedavg(&contributions);
        let next = objective(&theta) - floor;
        if suboptimality <= 1e-300 {
            ratios.push(0.0);
        } else {
            ratios.push(next / suboptimality);
        }
        suboptimality = next;
    }
    let pass = ratios.iter().all(|r| *r <= rho + 1e-6);
    Ok(ContractionReport { ratios, rho, pass })
}

/// Random symmetric positive-definite matrix with known extreme eigenvalues:
/// a diagonal spectrum spanning `[mu, smoothness]` conjugated by random
/// Givens rotations (which preserve the eigenvalues exactly).
pub fn random_spd(dim: usize, mu: f64, smoothness: f64, rng: &mut RngStream) -> Vec<Vec<f64>> {
    assert!(dim >= 2 && smoothness >= mu && mu > 0.0);
    let mut a: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            let mut row = vec![0.0; dim];
            row[i] = if dim == 1 {
                mu
            } else {
                mu + (smoothness - mu) * i as f64 / (dim - 1) as f64
            };
            row
        })
        .collect();
    for _ in 0..3 * dim {
        let p = rng.gen_range(0..dim);
        let mut q = rng.gen_range(0..dim - 1);
        if q >= p {
            q += 1;
        }
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (s, c) = angle.sin_cos();
        // A <- G A G^T with the rotation acting on rows/columns p and q
        for j in 0..dim {
            let (ap, aq) = (a[p][j], a[q][j]);
            a[p][j] = c * ap - s * aq;
            a[q][j] = s * ap + c * aq;
        }
        for row in a.iter_mut() {
            let (ap, aq) = (row[p], row[q]);
            row[p] = c * ap - s * aq;
            row[q] = s * ap + c * aq;
        }
    }
    // enforce exact symmetry against accumulated rounding
    for i in 0..dim {
        for j in 0..i {
            let v = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    a
}
