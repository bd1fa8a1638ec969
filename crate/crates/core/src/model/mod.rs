//! The local learner every client runs: a small convolutional classifier
//! with channel and spatial attention gates, manual forward/backward passes,
//! and SGD with momentum under a cosine learning-rate schedule.

mod net;
mod optimizer;
mod params;

pub use net::{attention_gates, backward, forward, init_params, Batch, FeatureMap, GateParams};
pub use optimizer::{sgd_step, OptState};
pub use params::{LayerDesc, LayerKind, ModelParams, NetShape, ParamUpdate};
