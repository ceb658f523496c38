//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by mesh handling, configuration, and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or unsupported mesh input.
    #[error("mesh error: {0}")]
    Mesh(String),

    /// Configuration file problems: parse errors, unknown keys, bad values.
    #[error("config error: {0}")]
    Config(String),

    /// A scalar boundary-value problem (e.g. the transmural Laplace lift)
    /// is singular or lacks boundary data.
    #[error("fiber construction error: {0}")]
    Fibers(String),

    /// Element Jacobian became non-positive during assembly.
    #[error("element {element} inverted: det J = {det_j:.3e} at quadrature point {qp}")]
    ElementInverted {
        element: usize,
        qp: usize,
        det_j: f64,
    },

    /// Newton iteration failed to converge within its budget.
    #[error("Newton solver diverged at t = {time:.6} s: {detail}")]
    NewtonDiverged { time: f64, detail: String },

    /// Sparse factorization or solve failure.
    #[error("linear solver error: {0}")]
    Linear(String),

    /// Calibration could not bracket or reach its target.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Checkpoint/restart mismatch or version problem.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure (checkpoints).
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
