//! Cross-client spectral inversion: bridges parameter updates into 2-D
//! grids, compares their wavelet energy maps across clients, and projects
//! the resulting binary anomaly mask back to the spatial domain.

use crate::error::Result;
use crate::model::ParamUpdate;
use crate::numerics::{dwt2_haar, idwt2_haar, EnergyMap, Grid2D, WaveletPyramid};

/// Binary anomaly mask in the packed pyramid layout.
#[derive(Debug, Clone)]
pub struct FrequencyMask {
    pub grid: Grid2D,
}

impl FrequencyMask {
    pub fn all_zero(height: usize, width: usize) -> Self {
        Self {
            grid: Grid2D::zeros(height, width),
        }
    }

    /// Fraction of flagged positions.
    pub fn density(&self) -> f64 {
        self.grid.values().iter().sum::<f64>() / self.grid.values().len() as f64
    }
}

/// Spatial projection of a frequency mask, normalized to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SpatialMask {
    pub grid: Grid2D,
}

impl SpatialMask {
    pub fn all_zero(height: usize, width: usize) -> Self {
        Self {
            grid: Grid2D::zeros(height, width),
        }
    }
}

/// Packs a parameter update into an `height x width` grid with a fixed
/// deterministic mapping so positions are comparable across clients and
/// rounds: coordinates `0, s, 2s, ...` with stride `s = ceil(d / (H*W))`
/// fill the grid row-major, zero-padded once the update is exhausted.
pub fn update_to_grid(update: &ParamUpdate, height: usize, width: usize) -> Grid2D {
    let cells = height * width;
    assert!(cells > 0, "target grid must be nonempty");
    let d = update.delta.len();
    let stride = d.div_ceil(cells).max(1);
    let mut values = Vec::with_capacity(cells);
    let mut idx = 0;
    while values.len() < cells && idx < d {
        values.push(update.delta[idx]);
        idx += stride;
    }
    values.resize(cells, 0.0);
    Grid2D::from_values(height, width, values)
}

/// Selective suppression of flagged spectral components before aggregation:
/// at every flagged position each client's wavelet coefficient is replaced
/// by the across-client median, so anomalous per-client energy is clipped to
/// the consensus while unflagged components pass through untouched. The
/// filtered grids are written back through the same coordinate map as
/// [`update_to_grid`]; unsampled coordinates keep their raw values. An
/// all-zero mask returns the updates unchanged.
pub fn median_filter_updates(
    updates: &[ParamUpdate],
    mask: &FrequencyMask,
    levels: usize,
) -> Result<Vec<ParamUpdate>> {
    assert!(updates.len() >= 2, "need at least two updates to filter");
    let (h, w) = (mask.grid.height(), mask.grid.width());
    if mask.grid.values().iter().all(|m| *m == 0.0) {
        return Ok(updates.to_vec());
    }
    let mut pyramids = updates
        .iter()
        .map(|u| dwt2_haar(&update_to_grid(u, h, w), levels))
        .collect::<Result<Vec<_>>>()?;
    let mut column = vec![0.0; pyramids.len()];
    for r in 0..h {
        for c in 0..w {
            if mask.grid.get(r, c) == 0.0 {
                continue;
            }
            for (slot, p) in column.iter_mut().zip(&pyramids) {
                *slot = p.packed().get(r, c);
            }
            column.sort_by(|a, b| a.partial_cmp(b).expect("finite coefficients"));
            let mid = column.len() / 2;
            let median = if column.len() % 2 == 0 {
                0.5 * (column[mid - 1] + column[mid])
            } else {
                column[mid]
            };
            for p in &mut pyramids {
                p.packed_mut().set(r, c, median);
            }
        }
    }
    let d = updates[0].delta.len();
    let stride = d.div_ceil(h * w).max(1);
    Ok(updates
        .iter()
        .zip(&pyramids)
        .map(|(update, pyramid)| {
            let filtered = idwt2_haar(pyramid);
            let mut out = update.delta.clone();
            for (cell, value) in filtered.values().iter().enumerate() {
                let idx = cell * stride;
                if idx >= d {
                    break;
                }
                out[idx] = *value;
            }
            ParamUpdate { delta: out }
        })
        .collect())
}

/// Squared wavelet coefficients of the gridded update.
pub fn energy_map(
    update: &ParamUpdate,
    levels: usize,
    height: usize,
    width: usize,
) -> Result<EnergyMap> {
    let grid = update_to_grid(update, height, width);
    Ok(dwt2_haar(&grid, levels)?.energy_map())
}

/// Per-position `max_i E_i - min_i E_i` across client energy maps.
pub fn discrepancy(energies: &[EnergyMap]) -> Grid2D {
    assert!(
        energies.len() >= 2,
        "discrepancy needs at least two energy maps"
    );
    let (h, w) = (energies[0].grid().height(), energies[0].grid().width());
    assert!(
        energies
            .iter()
            .all(|e| e.grid().height() == h && e.grid().width() == w),
        "energy map dimensions differ"
    );
    Grid2D::from_fn(h, w, |r, c| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for e in energies {
            let v = e.grid().get(r, c);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    })
}

/// Flags positions where the discrepancy strictly exceeds `zeta * mean`;
/// an all-zero discrepancy therefore yields an all-zero mask.
pub fn threshold_mask(discrepancy: &Grid2D, zeta: f64) -> FrequencyMask {
    assert!(zeta > 0.0, "zeta must be positive");
    let threshold = zeta * discrepancy.mean();
    let grid = Grid2D::from_values(
        discrepancy.height(),
        discrepancy.width(),
        discrepancy
            .values()
            .iter()
            .map(|&v| if v > threshold { 1.0 } else { 0.0 })
            .collect(),
    );
    FrequencyMask { grid }
}

/// Inverse-transforms the mask interpreted as a coefficient field and
/// rescales affinely to `[0, 1]` (min to 0, max to 1). An all-zero mask maps
/// to an all-zero spatial mask; a degenerate constant nonzero projection
/// saturates to all ones.
pub fn spatialize_mask(mask: &FrequencyMask, levels: usize) -> Result<SpatialMask> {
    let pyramid = WaveletPyramid::from_packed(mask.grid.clone(), levels)?;
    let mut spatial = idwt2_haar(&pyramid);
    let lo = spatial.min();
    let hi = spatial.max();
    let span = hi - lo;
    if span <= f64::EPSILON {
        let fill = if hi.abs() <= f64::EPSILON { 0.0 } else { 1.0 };
        return Ok(SpatialMask {
            grid: Grid2D::constant(spatial.height(), spatial.width(), fill),
        });
    }
    for v in spatial.values_mut() {
        *v = (*v - lo) / span;
    }
    Ok(SpatialMask { grid: spatial })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reshape_when_lengths_match() {
        let update = ParamUpdate {
            delta: (0..16).map(|i| i as f64).collect(),
        };
        let grid = update_to_grid(&update, 4, 4);
        assert_eq!(grid.get(0, 0), 0.0);
        assert_eq!(grid.get(3, 3), 15.0);
    }

    #[test]
    fn zero_update_gives_zero_grid() {
        let update = ParamUpdate::zeros(37);
        let grid = update_to_grid(&update, 4, 4);
        assert!(grid.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn strided_subsample_coordinates() {
        // d = 10 into 2x2: stride ceil(10/4) = 3 -> coordinates {0, 3, 6, 9}
        let update = ParamUpdate {
            delta: (0..10).map(|i| i as f64).collect(),
        };
        let grid = update_to_grid(&update, 2, 2);
        assert_eq!(grid.values(), &[0.0, 3.0, 6.0, 9.0]);
    }

    #[test]
    fn short_update_zero_pads() {
        let update = ParamUpdate {
            delta: vec![1.0, 2.0, 3.0],
        };
        let grid = update_to_grid(&update, 2, 2);
        assert_eq!(grid.values(), &[1.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn energy_map_of_zero_update_is_zero() {
        let update = ParamUpdate::zeros(64);
        let e = energy_map(&update, 1, 8, 8).unwrap();
        assert!(e.grid().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn energy_map_total_matches_parseval() {
        let update = ParamUpdate {
            delta: (0..64).map(|i| ((i * 37 % 11) as f64) - 5.0).collect(),
        };
        let gridded = update_to_grid(&update, 8, 8);
        let e = energy_map(&update, 3, 8, 8).unwrap();
        let total: f64 = e.grid().values().iter().sum();
        assert!((total - gridded.energy()).abs() < 1e-9);
    }

    #[test]
    fn energy_map_matrix_oracle_4x4() {
        // brute-force check of one squared coefficient via the level-1 basis:
        // top-left LL entry is ((v00+v01+v10+v11)/2)^2
        let update = ParamUpdate {
            delta: vec![
                1.0, 2.0, 0.0, 0.0, //
                3.0, -1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        };
        let e = energy_map(&update, 1, 4, 4).unwrap();
        let ll = (1.0 + 2.0 + 3.0 - 1.0) / 2.0;
        assert!((e.grid().get(0, 0) - ll * ll).abs() < 1e-12);
    }

    #[test]
    fn discrepancy_of_identical_maps_is_zero() {
        let update = ParamUpdate {
            delta: (0..16).map(|i| i as f64 * 0.1).collect(),
        };
        let e = energy_map(&update, 1, 4, 4).unwrap();
        let d = discrepancy(&[e.clone(), e]);
        assert!(d.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn discrepancy_isolates_single_difference() {
        let mut a = Grid2D::zeros(2, 2);
        let mut b = Grid2D::zeros(2, 2);
        a.set(0, 1, 1.0);
        b.set(0, 1, 4.0);
        let maps = vec![
            WaveletPyramid::from_packed(a, 1).unwrap().energy_map(),
            WaveletPyramid::from_packed(b, 1).unwrap().energy_map(),
        ];
        let d = discrepancy(&maps);
        assert_eq!(d.get(0, 1), 15.0); // 16 - 1
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn discrepancy_matches_per_position_loop() {
        let grids: Vec<Grid2D> = (0..3)
            .map(|k| Grid2D::from_fn(4, 4, |r, c| ((r * 4 + c + k) % 5) as f64))
            .collect();
        let maps: Vec<EnergyMap> = grids
            .iter()
            .map(|g| WaveletPyramid::from_packed(g.clone(), 1).unwrap().energy_map())
            .collect();
        let d = discrepancy(&maps);
        for r in 0..4 {
            for c in 0..4 {
                let vals: Vec<f64> = maps.iter().map(|m| m.grid().get(r, c)).collect();
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                assert_eq!(d.get(r, c), hi - lo);
            }
        }
    }

    #[test]
    #[should_panic(expected = "at least two")]
    fn discrepancy_single_map_panics() {
        let e = WaveletPyramid::from_packed(Grid2D::zeros(2, 2), 1)
            .unwrap()
            .energy_map();
        discrepancy(&[e]);
    }

    #[test]
    fn zero_discrepancy_gives_zero_mask() {
        let mask = threshold_mask(&Grid2D::zeros(4, 4), 1.5);
        assert_eq!(mask.density(), 0.0);
    }

    #[test]
    fn threshold_mask_strict_inequality() {
        // mean 2, threshold 2.4 -> only the 3s flagged
        let d = Grid2D::from_values(2, 2, vec![1.0, 3.0, 1.0, 3.0]);
        let mask = threshold_mask(&d, 1.2);
        assert_eq!(mask.grid.values(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn huge_zeta_clears_mask() {
        let d = Grid2D::from_values(2, 2, vec![1.0, 3.0, 1.0, 3.0]);
        let mask = threshold_mask(&d, 1e12);
        assert_eq!(mask.density(), 0.0);
    }

    #[test]
    fn mask_monotone_in_zeta() {
        let d = Grid2D::from_fn(8, 8, |r, c| ((r * 13 + c * 7) % 10) as f64);
        let mut previous: Option<Vec<f64>> = None;
        for zeta in [0.5, 1.0, 1.5, 2.0, 3.0] {
            let mask = threshold_mask(&d, zeta).grid.values().to_vec();
            if let Some(bigger) = &previous {
                for (tight, loose) in mask.iter().zip(bigger) {
                    assert!(tight <= loose, "raising zeta added a mask position");
                }
            }
            previous = Some(mask);
        }
    }

    #[test]
    fn median_filter_clips_flagged_outlier_to_consensus() {
        // three clients agree except one spikes a single coefficient
        let mut updates: Vec<ParamUpdate> = (0..3)
            .map(|_| ParamUpdate {
                delta: (0..16).map(|i| (i as f64) * 0.1).collect(),
            })
            .collect();
        updates[2].delta[5] += 40.0;
        // flag every position so the spiked coefficient is caught wherever
        // the transform spreads it
        let mask = FrequencyMask {
            grid: Grid2D::constant(4, 4, 1.0),
        };
        let filtered = median_filter_updates(&updates, &mask, 1).unwrap();
        // all clients now share the consensus spectrum, which matches the
        // two unspiked clients
        for f in &filtered {
            for (a, b) in f.delta.iter().zip(&updates[0].delta) {
                assert!((a - b).abs() < 1e-9, "outlier survived: {a} vs {b}");
            }
        }
    }

    #[test]
    fn median_filter_leaves_unflagged_positions_alone() {
        let updates: Vec<ParamUpdate> = (0..3)
            .map(|k| ParamUpdate {
                delta: (0..16).map(|i| (i * (k + 1)) as f64 * 0.25).collect(),
            })
            .collect();
        let mut mask_grid = Grid2D::zeros(4, 4);
        mask_grid.set(0, 0, 1.0);
        let mask = FrequencyMask { grid: mask_grid };
        let filtered = median_filter_updates(&updates, &mask, 1).unwrap();
        for (f, u) in filtered.iter().zip(&updates) {
            let pf = dwt2_haar(&update_to_grid(f, 4, 4), 1).unwrap();
            let pu = dwt2_haar(&update_to_grid(u, 4, 4), 1).unwrap();
            for r in 0..4 {
                for c in 0..4 {
                    if (r, c) == (0, 0) {
                        continue;
                    }
                    assert!((pf.packed().get(r, c) - pu.packed().get(r, c)).abs() < 1e-9);
                }
            }
            // the flagged LL position is the cross-client median
            let mids: Vec<f64> = updates
                .iter()
                .map(|u| dwt2_haar(&update_to_grid(u, 4, 4), 1).unwrap().packed().get(0, 0))
                .collect();
            let mut sorted = mids.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((pf.packed().get(0, 0) - sorted[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_mask_filter_is_identity() {
        let updates: Vec<ParamUpdate> = (0..2)
            .map(|k| ParamUpdate {
                delta: (0..40).map(|i| (i + k) as f64 * 0.3).collect(),
            })
            .collect();
        let mask = FrequencyMask::all_zero(4, 4);
        let out = median_filter_updates(&updates, &mask, 2).unwrap();
        for (a, b) in out.iter().zip(&updates) {
            assert_eq!(a.delta, b.delta);
        }
    }

    #[test]
    fn filter_preserves_unsampled_coordinates() {
        // d = 33 over a 4x4 grid: stride 3, only indices 0,3,... are sampled
        let updates: Vec<ParamUpdate> = (0..3)
            .map(|k| ParamUpdate {
                delta: (0..33).map(|i| (i + 7 * k) as f64).collect(),
            })
            .collect();
        let mask = FrequencyMask {
            grid: Grid2D::constant(4, 4, 1.0),
        };
        let out = median_filter_updates(&updates, &mask, 1).unwrap();
        for (f, u) in out.iter().zip(&updates) {
            for (i, (a, b)) in f.delta.iter().zip(&u.delta).enumerate() {
                if i % 3 != 0 {
                    assert_eq!(a, b, "unsampled coordinate {i} was modified");
                }
            }
        }
    }

    #[test]
    fn all_zero_mask_spatializes_to_zero() {
        let mask = FrequencyMask::all_zero(8, 8);
        let spatial = spatialize_mask(&mask, 3).unwrap();
        assert!(spatial.grid.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn all_one_mask_normalizes_to_unit_range() {
        let mask = FrequencyMask {
            grid: Grid2D::constant(8, 8, 1.0),
        };
        let spatial = spatialize_mask(&mask, 2).unwrap();
        let lo = spatial.grid.min();
        let hi = spatial.grid.max();
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.0);
        assert!(spatial.grid.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn single_ll_position_matches_inverse_oracle() {
        let mut grid = Grid2D::zeros(4, 4);
        grid.set(0, 0, 1.0); // LL position at J=1
        let mask = FrequencyMask { grid: grid.clone() };
        let spatial = spatialize_mask(&mask, 1).unwrap();
        // oracle: inverse transform then affine-normalize independently
        let raw = idwt2_haar(&WaveletPyramid::from_packed(grid, 1).unwrap());
        let (lo, hi) = (raw.min(), raw.max());
        for (got, want_raw) in spatial.grid.values().iter().zip(raw.values()) {
            let want = (want_raw - lo) / (hi - lo);
            assert!((got - want).abs() < 1e-12);
        }
    }
}
