use thiserror::Error;

/// Every failure the library can report.
///
/// Variants are grouped by class (see [`Error::class`]) so that front ends can
/// map them onto stable exit codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("barrier violation: barrier {barrier} vs extreme eigenvalue {eigenvalue}")]
    BarrierViolation { barrier: f64, eigenvalue: f64 },

    #[error("matrix is not positive semidefinite (lambda_min = {lambda_min})")]
    NotPsd { lambda_min: f64 },

    #[error("singular Gram matrix (lambda_min = {lambda_min}, lambda_max = {lambda_max})")]
    SingularGram { lambda_min: f64, lambda_max: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("no positive entry: promise sum(<M_i, A>) > 0 violated")]
    NoPositiveEntry,

    #[error("numerical warning: {0}")]
    NumericalWarning(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("isotropy violated: ||sum v v^T - I||_F = {deviation}")]
    IsotropyViolation { deviation: f64 },

    #[error("no index satisfies the barrier gap test at iteration {iteration}")]
    NoWitness { iteration: usize },

    #[error("barrier collapse at step {step}: best score {score} exceeds {limit}")]
    BarrierCollapse { step: usize, score: f64, limit: f64 },

    #[error("no eligible removal candidate at iteration {iteration}")]
    NoEligibleRemoval { iteration: usize },

    #[error("iteration budget {iterations} exhausted with lambda_min = {lambda_min}")]
    IterationExhausted { iterations: usize, lambda_min: f64 },
}

/// Coarse error classes used for exit codes and report verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Precondition,
    Numerical,
    IterationExhausted,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::NumericalWarning(_)
            | Error::NonFinite(_)
            | Error::BarrierViolation { .. }
            | Error::NotPsd { .. } => ErrorClass::Numerical,
            Error::IterationExhausted { .. } => ErrorClass::IterationExhausted,
            _ => ErrorClass::Precondition,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
