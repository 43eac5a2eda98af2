use thiserror::Error;

/// Errors raised by the laboratory's numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("entries sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("vector has {len} entries but the rank cutoff is {cutoff}")]
    TooLong { len: usize, cutoff: usize },
    #[error("truncation mismatch: {left} vs {right}")]
    TruncationMismatch { left: usize, right: usize },
    #[error("row {row} of the operator is invalid: {reason}")]
    InvalidOperator { row: usize, reason: String },
    #[error("{0} is not a prime")]
    InvalidPrime(u64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no convergence after {steps} steps (last change {last_change})")]
    NoConvergence { steps: usize, last_change: f64 },
    #[error("degenerate stream configuration: {0}")]
    DegenerateConfig(String),
    #[error("width {0} is not a twisting width (expected 1 or 2)")]
    InvalidWidth(u8),
    #[error("localization dimension t={t} is impossible for width {width} at rank {rank}")]
    InvalidT { t: u8, width: u8, rank: usize },
    #[error("fan (m={m}, k={k}) is infeasible for the available widths")]
    InfeasibleFan { m: usize, k: usize },
    #[error("fan is empty")]
    EmptyFan,
    #[error("level collection B is not a subset of B'")]
    NotSubset,
    #[error("levels do not all have the same cardinality")]
    CardinalityMismatch,
    #[error("log-domain overflow while evaluating stratification bounds")]
    Overflow,
    #[error("place {0} has no characters")]
    EmptyCharacterList(String),
    #[error("place {0} does not list the trivial character")]
    MissingTrivialCharacter(String),
    #[error("invalid character entry at place {place}: {reason}")]
    InvalidCharacter { place: String, reason: String },
    #[error("disparity {0} is outside [-1/2, 1/2]")]
    DisparityOutOfRange(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
