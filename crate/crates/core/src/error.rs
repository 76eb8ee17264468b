use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, MorError>;

/// Every failure mode of the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MorError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix entry is not finite: {0}")]
    NonFinite(String),

    #[error("matrix is not stable (max eigenvalue real part {max_real:e})")]
    NonStableMatrix { max_real: f64 },

    #[error("system is not stable: {0}")]
    NonStableSystem(String),

    #[error("singular operator: {0}")]
    SingularOperator(String),

    #[error("problem size {size} exceeds limit {limit}")]
    SizeLimitExceeded { size: usize, limit: usize },

    #[error("matrix is defective or has nearly repeated eigenvalues (eigenvector condition {condition:e})")]
    DefectiveMatrix { condition: f64 },

    #[error("rank deficient basis (condition {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("evaluation point {s} is a pole of the realization")]
    PoleHit { s: Complex64 },

    #[error("norm is infinite: {0}")]
    InfiniteNorm(String),

    #[error("not in the weighted H2 space: {0}")]
    NotInWeightedH2(String),

    #[error("quadrature did not converge (last estimate {estimate:e}, change {change:e})")]
    NonConvergedQuadrature { estimate: f64, change: f64 },

    #[error("iteration limit of {iterations} reached without convergence")]
    MaxIterationsExceeded { iterations: usize },

    #[error("reduced model is unstable (max pole real part {max_real:e})")]
    UnstableReducedModel { max_real: f64 },

    #[error("eigenvalue iteration did not converge")]
    NoConvergence,

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("usage: {0}")]
    Usage(String),
}

/// Coarse classification used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl MorError {
    pub fn class(&self) -> ErrorClass {
        match self {
            MorError::Usage(_) => ErrorClass::Usage,
            MorError::DimensionMismatch(_)
            | MorError::NonFinite(_)
            | MorError::NotInWeightedH2(_)
            | MorError::Parse { .. }
            | MorError::Io { .. } => ErrorClass::Data,
            _ => ErrorClass::Numerical,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            MorError::DimensionMismatch(_) => "DimensionMismatch",
            MorError::NonFinite(_) => "NonFinite",
            MorError::NonStableMatrix { .. } => "NonStableMatrix",
            MorError::NonStableSystem(_) => "NonStableSystem",
            MorError::SingularOperator(_) => "SingularOperator",
            MorError::SizeLimitExceeded { .. } => "SizeLimitExceeded",
            MorError::DefectiveMatrix { .. } => "DefectiveMatrix",
            MorError::RankDeficient { .. } => "RankDeficient",
            MorError::PoleHit { .. } => "PoleHit",
            MorError::InfiniteNorm(_) => "InfiniteNorm",
            MorError::NotInWeightedH2(_) => "NotInWeightedH2",
            MorError::NonConvergedQuadrature { .. } => "NonConvergedQuadrature",
            MorError::MaxIterationsExceeded { .. } => "MaxIterationsExceeded",
            MorError::UnstableReducedModel { .. } => "UnstableReducedModel",
            MorError::NoConvergence => "NoConvergence",
            MorError::Parse { .. } => "ParseError",
            MorError::Io { .. } => "IoError",
            MorError::Usage(_) => "Usage",
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}
