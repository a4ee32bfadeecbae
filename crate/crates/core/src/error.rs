use thiserror::Error;

/// Errors raised by the simulation and diagnostic routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {x} outside map domain {domain}")]
    Domain { x: f64, domain: &'static str },

    #[error("trajectory overflow at step {step}: |x| = {value:e} exceeds guard {guard:e}")]
    Overflow { step: u64, value: f64, guard: f64 },

    #[error("envelope sandwich violated at step {step}: z={z}, x={x}, y={y}")]
    SandwichViolation { step: u64, z: f64, x: f64, y: f64 },

    #[error("normalized ratio decreased at step {step}: {prev} -> {next}")]
    MonotoneViolation { step: u64, prev: f64, next: f64 },

    #[error("envelope check failed: violation {violation:e} at x = {x}")]
    EnvelopeFailure { x: f64, violation: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("population {x} exceeds cap {cap}")]
    PopulationCap { x: f64, cap: u64 },

    #[error("coverage: {0}")]
    Coverage(String),

    #[error("quadrature did not converge: refinement disagreement {0:e}")]
    Quadrature(f64),

    #[error("measure layout mismatch")]
    LayoutMismatch,

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
