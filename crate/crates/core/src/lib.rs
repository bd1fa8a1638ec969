//! Deterministic desk-scale simulator of federated SAR target recognition
//! under backdoor attack.
//!
//! The crate provides the full closed loop: a synthetic SAR chip generator
//! with multiplicative Gamma speckle, a small attention-gated convolutional
//! classifier with manual backpropagation, Dirichlet non-IID partitioning,
//! backdoor attack models (spatial patch and low-frequency spectral
//! triggers), the three-part defense (cross-client wavelet-energy inversion,
//! noise-aware adversarial training, dynamic health-based reweighting),
//! baseline robust aggregators (FedAvg / Krum / coordinate-wise Median),
//! and a reproducible experiment harness with CSV metrics emission.
//!
//! Every stochastic choice is drawn from a purpose-keyed splittable stream,
//! so a run is a pure function of its configuration and seed.

pub mod adversary;
pub mod aggregation;
pub mod datasim;
pub mod defense;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;

pub use error::{Result, SimError};
