use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("exploration threshold {0} must be finite and nonnegative")]
    InvalidThreshold(f64),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("round outcome inconsistent with action: {0}")]
    InconsistentOutcome(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("family has {size} members, above the enumeration limit of {limit}; request a sampled subset")]
    FamilyTooLarge { size: u128, limit: u128 },
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("scaling fit: {0}")]
    Fit(String),
}
