use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("chain is not irreducible and aperiodic: {0}")]
    Ergodicity(String),
    #[error("linear solve failed: {0}")]
    Solver(String),
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("replay buffer {buffer} holds {len} transitions, need {needed}")]
    Warmup {
        buffer: usize,
        len: usize,
        needed: usize,
    },
    #[error("iterates diverged at optimization step {tau}")]
    Divergence {
        tau: u64,
        trace: Box<crate::learner::Trace>,
    },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
