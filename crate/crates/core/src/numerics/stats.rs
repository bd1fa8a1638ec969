//! Divergence and percentile utilities.

/// Additive smoothing applied inside [`kl_divergence`]; KL is undefined for
/// zero probabilities and this is the minimal fix.
pub const KL_SMOOTHING: f64 = 1e-8;

/// Smoothed Kullback-Leibler divergence
/// `sum_k p_k * ln((p_k + eps) / (q_k + eps))`.
///
/// Both arguments must be probability vectors of the same length (entries
/// nonnegative, each summing to 1 within 1e-6); violations panic.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "kl_divergence: length mismatch");
    debug_assert!(
        (p.iter().sum::<f64>() - 1.0).abs() < 1e-6 && (q.iter().sum::<f64>() - 1.0).abs() < 1e-6,
        "kl_divergence arguments must sum to 1"
    );
    p.iter()
        .zip(q)
        .map(|(&pk, &qk)| {
            if pk == 0.0 {
                0.0
            } else {
                pk * ((pk + KL_SMOOTHING) / (qk + KL_SMOOTHING)).ln()
            }
        })
        .sum()
}

/// Linear-interpolation percentile on the sorted values:
/// `rank = p / 100 * (n - 1)`, interpolating between the bracketing order
/// statistics. Panics on an empty slice.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty list");
    assert!((0.0..=100.0).contains(&p), "percentile p out of [0, 100]");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("percentile: non-finite value"));
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_of_identical_is_zero() {
        let p = [0.3, 0.7];
        let v = kl_divergence(&p, &p);
        assert!(v.abs() < 1e-7, "got {v}");
    }

    #[test]
    fn kl_point_mass_vs_uniform() {
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-4, "got {v}");
    }

    #[test]
    fn kl_two_point_frozen_value() {
        // independent summation: 0.2*ln((0.2+e)/(0.6+e)) + 0.8*ln((0.8+e)/(0.4+e))
        let v = kl_divergence(&[0.2, 0.8], &[0.6, 0.4]);
        assert!((v - 0.33479528338100106).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn kl_nonnegative_within_smoothing() {
        let pairs = [
            (vec![0.25, 0.25, 0.25, 0.25], vec![0.1, 0.2, 0.3, 0.4]),
            (vec![0.9, 0.1], vec![0.1, 0.9]),
            (vec![0.0, 1.0], vec![1.0, 0.0]),
        ];
        for (p, q) in pairs {
            assert!(kl_divergence(&p, &q) >= -1e-7);
        }
    }

    #[test]
    #[should_panic(expected = "length mismatch")]
    fn kl_length_mismatch_panics() {
        kl_divergence(&[1.0], &[0.5, 0.5]);
    }

    #[test]
    fn percentile_median_odd() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 50.0), 3.0);
    }

    #[test]
    fn percentile_interpolates() {
        // rank 1.9 -> 0.2 + 0.9 * (5.0 - 0.2)
        let v = percentile(&[0.1, 0.2, 5.0], 95.0);
        assert!((v - 4.52).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn percentile_100_is_max() {
        assert_eq!(percentile(&[3.0, -1.0, 7.5, 2.0], 100.0), 7.5);
        assert_eq!(percentile(&[3.0, -1.0, 7.5, 2.0], 0.0), -1.0);
    }

    #[test]
    #[should_panic(expected = "empty")]
    fn percentile_empty_panics() {
        percentile(&[], 50.0);
    }
}
