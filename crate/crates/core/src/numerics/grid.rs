//! Row-major 2-D grid of `f64`, the carrier for SAR chips, wavelet
//! coefficient planes, energy maps, and masks.

/// A dense `height x width` grid stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid2D {
    /// Builds a grid from row-major values. Panics if the value count does
    /// not match `height * width` or any value is non-finite.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        assert_eq!(
            values.len(),
            height * width,
            "value count {} does not match {}x{}",
            values.len(),
            height,
            width
        );
        assert!(
            values.iter().all(|v| v.is_finite()),
            "grid values must be finite"
        );
        Self {
            height,
            width,
            values,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self::from_values(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::from_values(height, width, values)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.height && col < self.width);
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.height && col < self.width);
        self.values[row * self.width + col] = value;
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Sum of squared entries.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Grid2D) -> Grid2D {
        assert_eq!(
            (self.height, self.width),
            (other.height, other.width),
            "hadamard requires equal dimensions"
        );
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Grid2D::from_values(self.height, self.width, values)
    }

    /// Clamps every entry into `[lo, hi]` in place.
    pub fn clip(&mut self, lo: f64, hi: f64) {
        for v in &mut self.values {
            *v = v.clamp(lo, hi);
        }
    }
}
