use thiserror::Error;

/// Errors raised by model construction, solvers and the trainer.
#[derive(Debug, Error)]
pub enum TreeMaxError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid probability row at {location}: {reason}")]
    InvalidDistribution { location: String, reason: String },

    #[error("reward at (state {state}, action {action}) is {value}, outside [0, 1]")]
    RewardOutOfRange {
        state: usize,
        action: usize,
        value: f64,
    },

    #[error("discount {0} is not strictly inside (0, 1)")]
    InvalidDiscount(f64),

    #[error("chain is not irreducible and aperiodic: |lambda_2| = {lambda2} >= 1 - 1e-9")]
    NonMixing { lambda2: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("eigen-solver did not converge within {iterations} iterations")]
    EigenNonConvergence { iterations: usize },

    #[error(
        "the exponentiated variant requires rewards that depend only on the state; \
         state {state} has action-dependent rewards"
    )]
    ActionDependentReward { state: usize },

    #[error("depth 0 has no tree expansion; use the uniform depth-0 policy instead")]
    ZeroDepth,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("negative variance {0} exceeds the cancellation threshold")]
    NegativeVariance(f64),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TreeMaxError>;
