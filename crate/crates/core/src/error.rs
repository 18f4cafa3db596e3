use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} at {index} is not a probability distribution: {detail}")]
    InvalidDistribution {
        what: &'static str,
        index: String,
        detail: String,
    },

    #[error("discount factor must lie in [0, 1), got {0}")]
    InvalidDiscount(f64),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("new policy puts mass {mass} on action {action} in state {state} where the old policy has none")]
    SupportViolation {
        state: usize,
        action: usize,
        mass: f64,
    },

    #[error("average KL divergence {kl} exceeds trust-region radius {delta}")]
    TrustRegion { kl: f64, delta: f64 },

    #[error("new policy has negative expected advantage {expected_advantage}; it cannot be a trust-region maximizer")]
    NotAnImprovementStep { expected_advantage: f64 },

    #[error("an advantage estimate is required for the estimated-advantage bound")]
    MissingEstimate,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("linear solve failed: {0}")]
    Numeric(String),

    #[error("failed to parse MDP document: {0}")]
    Parse(String),
}
