use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("map is singular at x = 0")]
    Singularity,
    #[error("orbit terminated on the singular line after {steps} steps")]
    OrbitTerminated { steps: usize },
    #[error("infinite return time at x = 0")]
    InfiniteRoof,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("quadrature did not converge: error estimate {estimate:e} above tolerance {tolerance:e}")]
    Quadrature { estimate: f64, tolerance: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("only {found} of {requested} section crossings found within the time budget")]
    PartialCrossings { found: usize, requested: usize },
    #[error("model violation: {0}")]
    ModelViolation(String),
    #[error("projection quality: {0}")]
    Projection(String),
    #[error("config: {0}")]
    Config(String),
    #[error("estimator disagreement: {0}")]
    Disagreement(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
