//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by model construction, evaluation and time integration.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument left the mathematical domain of an operation
    /// (nonpositive volume, negative moment order, negative time, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter regime the model does not support, e.g. a fragment
    /// exponent that produces an infinite number of daughter particles.
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    /// A caller broke an API contract (mismatched grids, oversized
    /// brute-force grid, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration; carries every problem found, not just the first.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// The adaptive stepper could not find an acceptable step size above
    /// `dt_min`. The run aborts; partial results stay valid up to `t`.
    #[error("stiffness failure at t = {t:.6e}: step size underflowed dt_min = {dt_min:.3e} after {rejections} rejections")]
    Stiffness { t: f64, dt_min: f64, rejections: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
