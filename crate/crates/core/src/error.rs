//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The BVP solver failed to reach the boundary-residual tolerance.
    #[error("BVP did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    /// Too few trajectories converged while building a dataset.
    #[error("dataset incomplete: {converged} of {requested} trajectories converged")]
    DatasetIncomplete { requested: usize, converged: usize },

    /// A training loss became non-finite.
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    DivergenceDetected { iteration: usize, loss: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
