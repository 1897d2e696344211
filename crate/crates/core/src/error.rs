use thiserror::Error;

/// Errors produced by workload validation, mechanism evaluation and the
/// enumeration oracle.
#[derive(Debug, Clone, PartialEq, Error)]
#[non_exhaustive]
pub enum Error {
    /// Query `index` has `|q(D) - q(D')| > 1`.
    #[error("query {index} violates sensitivity 1: |{value_d} - {value_dprime}| > 1")]
    SensitivityViolation { index: usize, value_d: f64, value_dprime: f64 },

    #[error("workload has no queries")]
    EmptyWorkload,

    #[error("privacy budget must be positive and finite, got {0}")]
    NonPositiveBudget(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The mechanism tried to read noise coordinate `requested` from a tape of
    /// `available` per-query entries.
    #[error("noise tape exhausted: query {requested} needs noise but the tape holds {available} entries")]
    TapeExhausted { requested: usize, available: usize },

    #[error("tape layout mismatch: expected {expected}, found {found}")]
    LayoutMismatch { expected: &'static str, found: &'static str },

    /// The adaptive cost ledger left its admissible region. Never part of
    /// normal control flow.
    #[error("budget invariant violated: {0}")]
    BudgetInvariantViolation(String),

    #[error("laplace inverse cdf needs u in (0, 1), got {0}")]
    DomainError(f64),

    #[error("enumeration grid has {points} points, budget is {budget}")]
    GridBudgetExceeded { points: u128, budget: u128 },

    #[error("distributions are not over the same output space: {0}")]
    DomainMismatch(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
