//! Multiplicative Gamma speckle fields.

use rand_distr::{Distribution, Gamma};

use crate::error::{Result, SimError};
use crate::numerics::{Grid2D, RngStream};

/// Samples a `height x width` field of independent Gamma draws with shape
/// `looks` and scale `1 / looks`, i.e. unit mean and variance `1 / looks`.
/// Callers model multiplicative speckle as `x * G` (equivalently `x * (1 + N)`
/// with `N = G - 1`).
pub fn sample_speckle(height: usize, width: usize, looks: f64, rng: &mut RngStream) -> Result<Grid2D> {
    if !(looks > 0.0) {
        return Err(SimError::Config(format!(
            "equivalent number of looks must be positive, got {looks}"
        )));
    }
    let gamma = Gamma::new(looks, 1.0 / looks)
        .map_err(|e| SimError::Config(format!("gamma distribution: {e}")))?;
    let values = (0..height * width).map(|_| gamma.sample(rng)).collect();
    Ok(Grid2D::from_values(height, width, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::StreamId;

    fn draws(looks: f64, n: usize) -> Vec<f64> {
        let mut rng = RngStream::new(99, StreamId::Aux { tag: 1, index: 0 });
        let g = sample_speckle(n, 1, looks, &mut rng).unwrap();
        g.values().to_vec()
    }

    #[test]
    fn unit_mean() {
        let xs = draws(4.0, 1_000_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 1.0).abs() < 5e-3, "mean {mean}");
    }

    #[test]
    fn variance_is_reciprocal_looks() {
        let xs = draws(4.0, 1_000_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        assert!(var > 0.245 && var < 0.255, "variance {var}");
    }

    #[test]
    fn one_look_matches_exponential() {
        // KS statistic against the Exp(1) CDF; a correct sampler lands well
        // under 0.01 at n = 1e5.
        let mut xs = draws(1.0, 100_000);
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len() as f64;
        let mut ks: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let cdf = 1.0 - (-x).exp();
            ks = ks.max((cdf - i as f64 / n).abs());
            ks = ks.max(((i + 1) as f64 / n - cdf).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn nonpositive_looks_rejected() {
        let mut rng = RngStream::new(0, StreamId::Aux { tag: 1, index: 1 });
        assert!(sample_speckle(2, 2, 0.0, &mut rng).is_err());
        assert!(sample_speckle(2, 2, -1.0, &mut rng).is_err());
    }

    #[test]
    fn deterministic_given_stream() {
        let a = draws(2.0, 64);
        let b = draws(2.0, 64);
        assert_eq!(a, b);
    }
}
