//! Orthonormal 2-D Haar wavelet analysis and synthesis.
//!
//! The transform uses the orthonormal filter pair
//! `(a, b) -> ((a + b) / sqrt(2), (a - b) / sqrt(2))` applied separably and
//! cascaded on the approximation quadrant, so total coefficient energy equals
//! source energy (Parseval) and the inverse reconstructs the source to
//! floating-point precision.
//!
//! Coefficients live in a packed single grid of the source dimensions: after
//! one level the four quadrants are, clockwise from top-left, the
//! approximation (LL), the horizontal-detail (LH), the diagonal-detail (HH),
//! and the vertical-detail (HL) subbands; deeper levels re-partition the LL
//! quadrant in place. A packed layout keeps per-position comparisons across
//! clients well defined.

use crate::error::{Result, SimError};
use crate::numerics::Grid2D;

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Level-`J` Haar decomposition of a 2-D grid in packed layout.
#[derive(Debug, Clone)]
pub struct WaveletPyramid {
    levels: usize,
    packed: Grid2D,
}

impl WaveletPyramid {
    /// Wraps an existing packed coefficient grid, e.g. a binary mask to be
    /// interpreted as a coefficient field. Dimensions must be divisible by
    /// `2^levels`.
    pub fn from_packed(packed: Grid2D, levels: usize) -> Result<Self> {
        check_dims(packed.height(), packed.width(), levels)?;
        Ok(Self { levels, packed })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn packed(&self) -> &Grid2D {
        &self.packed
    }

    pub fn packed_mut(&mut self) -> &mut Grid2D {
        &mut self.packed
    }

    /// Height and width of the top-level approximation (LL) subband.
    pub fn ll_dims(&self) -> (usize, usize) {
        (
            self.packed.height() >> self.levels,
            self.packed.width() >> self.levels,
        )
    }

    /// Sum of squared coefficients over the detail subbands only (everything
    /// outside the top-level LL block).
    pub fn detail_energy(&self) -> f64 {
        let (llh, llw) = self.ll_dims();
        let mut e = 0.0;
        for r in 0..self.packed.height() {
            for c in 0..self.packed.width() {
                if r < llh && c < llw {
                    continue;
                }
                let v = self.packed.get(r, c);
                e += v * v;
            }
        }
        e
    }

    /// Total coefficient energy.
    pub fn energy(&self) -> f64 {
        self.packed.energy()
    }

    /// Squared-magnitude energy field of the packed coefficients.
    pub fn energy_map(&self) -> EnergyMap {
        let grid = Grid2D::from_values(
            self.packed.height(),
            self.packed.width(),
            self.packed.values().iter().map(|v| v * v).collect(),
        );
        EnergyMap { grid }
    }
}

/// Per-position squared coefficient magnitudes of a packed pyramid.
#[derive(Debug, Clone)]
pub struct EnergyMap {
    grid: Grid2D,
}

impl EnergyMap {
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn into_grid(self) -> Grid2D {
        self.grid
    }
}

fn check_dims(height: usize, width: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(SimError::Config(
            "wavelet decomposition level must be >= 1".into(),
        ));
    }
    let block = 1usize << levels;
    if height % block != 0 {
        return Err(SimError::Config(format!(
            "grid height {height} is not divisible by 2^{levels}"
        )));
    }
    if width % block != 0 {
        return Err(SimError::Config(format!(
            "grid width {width} is not divisible by 2^{levels}"
        )));
    }
    Ok(())
}

// One analysis level over the top-left `h x w` region, rows then columns.
fn analyze_level(values: &mut [f64], full_width: usize, h: usize, w: usize, scratch: &mut [f64]) {
    let half_w = w / 2;
    for r in 0..h {
        let row = &mut values[r * full_width..r * full_width + w];
        for i in 0..half_w {
            let a = row[2 * i];
            let b = row[2 * i + 1];
            scratch[i] = (a + b) * SQRT_HALF;
            scratch[half_w + i] = (a - b) * SQRT_HALF;
        }
        row.copy_from_slice(&scratch[..w]);
    }
    let half_h = h / 2;
    for c in 0..w {
        for i in 0..half_h {
            let a = values[(2 * i) * full_width + c];
            let b = values[(2 * i + 1) * full_width + c];
            scratch[i] = (a + b) * SQRT_HALF;
            scratch[half_h + i] = (a - b) * SQRT_HALF;
        }
        for i in 0..h {
            values[i * full_width + c] = scratch[i];
        }
    }
}

// Inverse of `analyze_level`: columns then rows.
fn synthesize_level(values: &mut [f64], full_width: usize, h: usize, w: usize, scratch: &mut [f64]) {
    let half_h = h / 2;
    for c in 0..w {
        for i in 0..half_h {
            let l = values[i * full_width + c];
            let d = values[(half_h + i) * full_width + c];
            scratch[2 * i] = (l + d) * SQRT_HALF;
            scratch[2 * i + 1] = (l - d) * SQRT_HALF;
        }
        for i in 0..h {
            values[i * full_width + c] = scratch[i];
        }
    }
    let half_w = w / 2;
    for r in 0..h {
        let row = &mut values[r * full_width..r * full_width + w];
        for i in 0..half_w {
            let l = row[i];
            let d = row[half_w + i];
            scratch[2 * i] = (l + d) * SQRT_HALF;
            scratch[2 * i + 1] = (l - d) * SQRT_HALF;
        }
        row.copy_from_slice(&scratch[..w]);
    }
}

/// Level-`levels` orthonormal Haar decomposition of `source`.
///
/// Errors if the dimensions are not divisible by `2^levels`.
pub fn dwt2_haar(source: &Grid2D, levels: usize) -> Result<WaveletPyramid> {
    check_dims(source.height(), source.width(), levels)?;
    let mut packed = source.clone();
    let full_width = packed.width();
    let mut scratch = vec![0.0; packed.height().max(packed.width())];
    let (mut h, mut w) = (packed.height(), packed.width());
    for _ in 0..levels {
        analyze_level(packed.values_mut(), full_width, h, w, &mut scratch);
        h /= 2;
        w /= 2;
    }
    Ok(WaveletPyramid { levels, packed })
}

/// Exact inverse of [`dwt2_haar`].
pub fn idwt2_haar(pyramid: &WaveletPyramid) -> Grid2D {
    let mut packed = pyramid.packed.clone();
    let full_width = packed.width();
    let mut scratch = vec![0.0; packed.height().max(packed.width())];
    for level in (0..pyramid.levels).rev() {
        let h = packed.height() >> level;
        let w = packed.width() >> level;
        synthesize_level(packed.values_mut(), full_width, h, w, &mut scratch);
    }
    packed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{RngStream, StreamId};
    use rand::Rng;

    fn random_grid(h: usize, w: usize, tag: u8) -> Grid2D {
        let mut rng = RngStream::new(42, StreamId::Aux { tag, index: 0 });
        Grid2D::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn constant_two_by_two_single_level() {
        let g = Grid2D::constant(2, 2, 1.0);
        let p = dwt2_haar(&g, 1).unwrap();
        assert!((p.packed().get(0, 0) - 2.0).abs() < 1e-12);
        assert!(p.packed().get(0, 1).abs() < 1e-12);
        assert!(p.packed().get(1, 0).abs() < 1e-12);
        assert!(p.packed().get(1, 1).abs() < 1e-12);
    }

    #[test]
    fn parseval_8x8_level3() {
        let g = random_grid(8, 8, 1);
        let p = dwt2_haar(&g, 3).unwrap();
        assert!((p.energy() - g.energy()).abs() < 1e-9);
    }

    #[test]
    fn perfect_reconstruction_32x32() {
        let g = random_grid(32, 32, 2);
        let p = dwt2_haar(&g, 3).unwrap();
        let back = idwt2_haar(&p);
        let max_err = g
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-9, "max reconstruction error {max_err}");
    }

    #[test]
    fn zero_pyramid_inverts_to_zero() {
        let p = WaveletPyramid::from_packed(Grid2D::zeros(4, 4), 2).unwrap();
        let g = idwt2_haar(&p);
        assert!(g.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ll_only_pyramid_inverts_to_constant() {
        let mut packed = Grid2D::zeros(2, 2);
        packed.set(0, 0, 2.0);
        let p = WaveletPyramid::from_packed(packed, 1).unwrap();
        let g = idwt2_haar(&p);
        for v in g.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    // Independent oracle: inner products against explicitly constructed
    // orthonormal Haar basis functions (scaling phi and wavelet psi tensor
    // products), never touching the fast cascade.
    fn phi(level: usize, k: usize, t: usize) -> f64 {
        let block = 1usize << level;
        if t >= k * block && t < (k + 1) * block {
            (block as f64).sqrt().recip()
        } else {
            0.0
        }
    }

    fn psi(level: usize, k: usize, t: usize) -> f64 {
        let block = 1usize << level;
        let half = block / 2;
        if t >= k * block && t < k * block + half {
            (block as f64).sqrt().recip()
        } else if t >= k * block + half && t < (k + 1) * block {
            -((block as f64).sqrt().recip())
        } else {
            0.0
        }
    }

    /// Builds the full (h*w) x (h*w) orthonormal transform matrix mapping a
    /// vectorized grid to its packed level-`levels` coefficient layout.
    pub(crate) fn haar_matrix(h: usize, w: usize, levels: usize) -> Vec<Vec<f64>> {
        let n = h * w;
        let mut mat = vec![vec![0.0; n]; n];
        // packed position (pr, pc) -> basis function over (y, x)
        for pr in 0..h {
            for pc in 0..w {
                let row = &mut mat[pr * w + pc];
                // figure out which subband (pr, pc) belongs to
                let (llh, llw) = (h >> levels, w >> levels);
                let (level, kind, ky, kx) = if pr < llh && pc < llw {
                    (levels, 0u8, pr, pc) // LL: phi x phi
                } else {
                    // detail subbands of level j occupy the quadrants of the
                    // (h >> (j-1)) x (w >> (j-1)) region
                    let mut found = None;
                    for j in 1..=levels {
                        let rh = h >> j;
                        let rw = w >> j;
                        if pr < rh && pc >= rw && pc < 2 * rw {
                            found = Some((j, 1u8, pr, pc - rw)); // horizontal detail
                            break;
                        }
                        if pr >= rh && pr < 2 * rh && pc < rw {
                            found = Some((j, 2u8, pr - rh, pc)); // vertical detail
                            break;
                        }
                        if pr >= rh && pr < 2 * rh && pc >= rw && pc < 2 * rw {
                            found = Some((j, 3u8, pr - rh, pc - rw)); // diagonal
                            break;
                        }
                    }
                    found.expect("every packed position maps to one subband")
                };
                for y in 0..h {
                    for x in 0..w {
                        let val = match kind {
                            0 => phi(level, ky, y) * phi(level, kx, x),
                            1 => phi(level, ky, y) * psi(level, kx, x),
                            2 => psi(level, ky, y) * phi(level, kx, x),
                            3 => psi(level, ky, y) * psi(level, kx, x),
                            _ => unreachable!(),
                        };
                        row[y * w + x] = val;
                    }
                }
            }
        }
        mat
    }

    pub(crate) fn apply_matrix(mat: &[Vec<f64>], grid: &Grid2D) -> Vec<f64> {
        mat.iter()
            .map(|row| {
                row.iter()
                    .zip(grid.values())
                    .map(|(m, v)| m * v)
                    .sum::<f64>()
            })
            .collect()
    }

    #[test]
    fn matrix_oracle_4x4_level2_unit_impulse() {
        let mut g = Grid2D::zeros(4, 4);
        g.set(0, 0, 1.0);
        let fast = dwt2_haar(&g, 2).unwrap();
        let mat = haar_matrix(4, 4, 2);
        let oracle = apply_matrix(&mat, &g);
        for (i, expect) in oracle.iter().enumerate() {
            let got = fast.packed().values()[i];
            assert!(
                (got - expect).abs() < 1e-12,
                "coefficient {i}: fast {got} vs oracle {expect}"
            );
        }
        // frozen layout computed from the basis-function oracle
        let expected = [
            [0.25, 0.25, 0.5, 0.0],
            [0.25, 0.25, 0.0, 0.0],
            [0.5, 0.0, 0.5, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ];
        for r in 0..4 {
            for c in 0..4 {
                assert!(
                    (fast.packed().get(r, c) - expected[r][c]).abs() < 1e-12,
                    "packed ({r},{c})"
                );
            }
        }
    }

    #[test]
    fn matrix_oracle_random_grids() {
        for (tag, levels) in [(3u8, 1usize), (4, 2), (5, 3)] {
            let g = random_grid(8, 8, tag);
            let fast = dwt2_haar(&g, levels).unwrap();
            let mat = haar_matrix(8, 8, levels);
            let oracle = apply_matrix(&mat, &g);
            for (i, expect) in oracle.iter().enumerate() {
                assert!((fast.packed().values()[i] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn indivisible_dimension_is_config_error() {
        let g = Grid2D::zeros(6, 8);
        let err = dwt2_haar(&g, 2).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("height 6"), "unexpected message: {msg}");
    }
}
