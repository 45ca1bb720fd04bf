use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("orbit left the divergence guard; last valid time {last_valid_time}")]
    Divergence { last_valid_time: f64 },

    #[error("step size underflow at t = {time}")]
    StepSize { time: f64 },

    #[error("orbit within the near-singularity threshold at t = {time} (|X| = {speed:e})")]
    NearSingularity { time: f64, speed: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("splitting unavailable at sample {index}")]
    Coverage { index: usize },

    #[error("partition of [0, {duration}] into steps in [{min_step}, {max_step}] is infeasible")]
    Partition {
        duration: f64,
        min_step: f64,
        max_step: f64,
    },

    #[error("budget exceeded after n = {achieved}")]
    Budget { achieved: usize },

    #[error("mesh refinement failed after {last_valid_step} steps: {reason}")]
    Refinement {
        last_valid_step: usize,
        reason: String,
    },

    #[error("Newton iteration did not converge; residual history {residuals:?}")]
    NewtonFailure { residuals: Vec<f64> },

    #[error("subspace estimate did not converge (angle {angle:e} rad)")]
    NoConvergence { angle: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
