//! Foundational numeric kernels shared by every other module: the 2-D grid
//! type, orthonormal Haar analysis/synthesis, Gamma speckle sampling,
//! divergence and percentile utilities, and splittable deterministic random
//! streams.
//!
//! Everything here is a pure function of its explicit inputs (including RNG
//! state); there is no shared mutable state.

mod grid;
mod rng;
mod speckle;
mod stats;
mod wavelet;

pub use grid::Grid2D;
pub use rng::{RngStream, StreamId};
pub use speckle::sample_speckle;
pub use stats::{kl_divergence, percentile, KL_SMOOTHING};
pub use wavelet::{dwt2_haar, idwt2_haar, EnergyMap, WaveletPyramid};
