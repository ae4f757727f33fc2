//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FiberError {
    #[error("space mismatch: {0}")]
    SpaceMismatch(String),
    #[error("zero total mass")]
    ZeroTotalMass,
    #[error("measure has no positive atom")]
    AllNull,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bad partition: {0}")]
    BadPartition(String),
    #[error("positive atom '{0}' maps to a null atom")]
    NotAbsolutelyContinuous(String),
    #[error("functional does not annihilate the seminorm kernel; dual value is infinite")]
    InfiniteDual,
    #[error("vector has zero seminorm; no norming functional exists")]
    ZeroVector,
    #[error("degenerate probe set: {0}")]
    DegenerateProbes(String),
    #[error("embedding parameters cannot reach the requested tolerance: {0}")]
    UnsatisfiableParams(String),
    #[error("non-constant rank on the requested set: {0}")]
    NonConstantRank(String),
    #[error("invalid norm data: {0}")]
    InvalidNorm(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("contraction violated at atom '{atom}' with defect {defect}")]
    ContractionViolated { atom: String, defect: f64 },
    #[error("section value escapes its fiber at atom '{atom}' (residual {residual})")]
    FiberMembership { atom: String, residual: f64 },
}

pub type Result<T> = std::result::Result<T, FiberError>;
