//! Experiment harness: the federated round loop, evaluation metrics, the
//! convergence-contraction verifier, configuration, and metrics emission.

mod config;
mod contraction;
mod experiment;
mod metrics;
mod round;

pub use config::{
    AttackConfig, DatasetConfig, DefenseConfig, ExperimentConfig, OptimizerConfig,
};
pub use contraction::{random_spd, verify_contraction, ContractionReport};
pub use experiment::{ablation_variants, run_experiment, RunResult, ABLATION_NAMES};
pub use metrics::{
    auc_ra, evaluate, macro_f1_from_confusion, write_health_csv, write_metrics_csv,
    ClientRoundRecord, RoundMetrics, Summary,
};
pub use round::{run_round, SimState};
