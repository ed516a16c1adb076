use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not Hermitian (asymmetry {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error("real Hessian is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("defining function cannot be evaluated: {0}")]
    OracleFailure(String),

    #[error("projection did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("point outside the validated collar: {0}")]
    CollarViolation(String),

    #[error("focal point reached: I + d*H is singular or ill-conditioned (condition {condition:e})")]
    FocalPoint { condition: f64 },

    #[error("gradient of the defining function vanishes")]
    VanishingGradient,

    #[error("point is not on the boundary (|rho| = {rho:e})")]
    OffBoundary { rho: f64 },

    #[error("cross-check failed for {what}: discrepancy {discrepancy:e}")]
    CrossCheck { what: &'static str, discrepancy: f64 },

    #[error("positive semi-definiteness violated: min eigenvalue {min_eigenvalue:e}")]
    PsdViolation { min_eigenvalue: f64 },

    #[error("finite differences unreliable: {0}")]
    FiniteDifference(String),

    #[error("point is not in the shrunken domain (distance {distance:e} <= radius {radius:e})")]
    OutsideShrunkDomain { distance: f64, radius: f64 },

    #[error("bound violated: {0}")]
    BoundViolation(String),

    #[error("denominator nonpositive ({0:e}); point lies outside the validated neighborhood")]
    NonPositiveDenominator(f64),

    #[error("weight hypothesis failed: {0}")]
    HypothesisFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
