//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate mean model: both mean vectors are zero")]
    DegenerateMeans,

    #[error("sampled labels missed a class in all {0} attempts")]
    EmptyClass(usize),

    #[error("covariance matrix is not positive definite")]
    SingularCovariance,

    #[error("data is not linearly separable (margin constraints are infeasible)")]
    Infeasible,

    #[error("non-finite value at iteration {iter}: loss={loss}, grad_norm={grad_norm}, w_norm={w_norm}")]
    NonFinite {
        iter: usize,
        loss: f64,
        grad_norm: f64,
        w_norm: f64,
    },

    #[error("weight vector is zero")]
    ZeroVector,

    #[error("trajectory has {0} records, at least 100 are required")]
    TrajectoryTooShort(usize),

    #[error("subgroup (y={y}, g={g}) has no examples")]
    EmptySubgroup { y: i32, g: u8 },

    #[error("dataset carries no group labels")]
    MissingGroups,

    #[error("non-separable regime: gamma={gamma} is not above gamma_star={gamma_star} (+1e-6)")]
    NonSeparableRegime { gamma: f64, gamma_star: f64 },

    #[error("could not bracket the root of f(q): f({q_lo:e})={f_lo:e}, f({q_hi:e})={f_hi:e}")]
    Bracket {
        q_lo: f64,
        f_lo: f64,
        q_hi: f64,
        f_hi: f64,
    },

    #[error("{what} did not converge after {iters} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iters: usize,
        residual: f64,
    },

    #[error("DEO does not change sign on [{lo}, {hi}]: DEO(lo)={deo_lo:e}, DEO(hi)={deo_hi:e}")]
    NoSignChange {
        lo: f64,
        hi: f64,
        deo_lo: f64,
        deo_hi: f64,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
