use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("action {action} is not available in state {state}")]
    InvalidAction { state: usize, action: usize },

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate reward distribution: pooled standard deviation is zero")]
    DegenerateDistribution,

    #[error("feedback matrix is unstable (spectral radius {radius:.6})")]
    UnstableFeedback { radius: f64 },

    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("world generation failed for seed {seed} after {attempts} attempts")]
    RejectionBudget { seed: u64, attempts: usize },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
