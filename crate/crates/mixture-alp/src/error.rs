//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, solvers, and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes between operands.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid numeric input (non-stochastic rows, bad weights, bad config values).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// The chain has no unique stationary distribution at gamma = 1.
    #[error("ergodicity error: {0}")]
    Ergodicity(String),

    /// Fixed-point iteration failed to reach tolerance within its cap.
    #[error("iteration limit reached after {iterations} iterations (residual {residual:.3e})")]
    IterationLimit { iterations: usize, residual: f64 },

    /// An occupancy entry is negative beyond tolerance.
    #[error("negative occupancy entry {value:.3e} at flat index {index}")]
    Negativity { index: usize, value: f64 },

    /// Operation is undefined in the average-cost setting.
    #[error("unsupported at gamma = 1: {0}")]
    UnsupportedDiscount(String),

    /// The requested geometry cannot intersect the hyperplane interior.
    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    /// A point lies outside the geometry domain where a gradient map is needed.
    #[error("domain error: {0}")]
    Domain(String),

    /// Numerical failure (non-convergent 1-D solve, bad discriminant).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A supplied sample falls outside the sampling mixture's support.
    #[error("sample (state {state}, action {action}) has zero mixture mass")]
    SamplingSupport { state: usize, action: usize },

    /// Configuration file problems.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
