//! Synthetic SAR-like dataset generation, label-skewed Dirichlet
//! partitioning, and the server's probe set.
//!
//! Chips are deterministic per-class arrangements of bright rectangles and
//! ellipses on a dark background, pose-jittered and multiplied by a Gamma
//! speckle field. No attempt is made at physically faithful SAR simulation;
//! the task only needs to be learnable and speckle-corrupted.

mod chips;
mod partition;

pub use chips::{
    build_probe_set, export_dataset, generate_chip, jittered_template, SarChip, I_MAX,
};
pub use partition::{dirichlet_partition, Partition};
