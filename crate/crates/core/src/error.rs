//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the simulator.
///
/// Contract violations (caller bugs such as mismatched vector lengths) panic
/// with a descriptive message instead of returning a variant; `SimError`
/// covers conditions a correct caller can still run into, i.e. bad
/// configuration values and I/O.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("failed to parse config: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
