//! Seeded random streams, distributions, least squares, logistic regression
//! and MCMC summary statistics.

pub mod dist;
pub mod glm;
pub mod ols;
pub mod rng;
pub mod stats;

pub use dist::{draw, Dist, DistSpec};
pub use glm::{logistic_fit, GlmFit};
pub use ols::{ols_fit, LinearFit};
pub use rng::{mix64, RngStream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("invalid {distribution} parameters: {detail}")]
    ParameterDomain { distribution: String, detail: String },
    #[error("design has {rows} rows but response has {len} values")]
    DimensionMismatch { rows: usize, len: usize },
    #[error("rank-deficient design: {columns} columns but numerical rank {rank}")]
    RankDeficient { columns: usize, rank: usize },
    #[error("{dim}x{dim} matrix is not positive definite even after jitter")]
    NotPositiveDefinite { dim: usize },
    #[error("binary response expected, found {value}")]
    NonBinaryResponse { value: f64 },
    #[error("logistic fit diverged (separation) after {} iterations; score trace {trace:?}", trace.len())]
    Separation { trace: Vec<f64> },
    #[error("logistic fit did not converge in {} iterations; score trace {trace:?}", trace.len())]
    NonConvergence { trace: Vec<f64> },
}
