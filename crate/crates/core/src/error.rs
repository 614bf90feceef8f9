use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("rank-one update is singular (1 - p'D^-1 p = {denominator:e})")]
    SingularUpdate { denominator: f64 },

    #[error("matrix is not symmetric: entry ({row}, {col}) differs from its transpose")]
    NotSymmetric { row: usize, col: usize },

    #[error("parameter is outside the natural parameter domain")]
    OutOfDomain,

    #[error("invalid simplex: {0}")]
    InvalidSimplex(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dimension {dim} exceeds the quadrature limit {max}")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("importance weights degenerate: effective sample size {ess:.1} of {budget}")]
    DegenerateWeights { ess: f64, budget: usize },

    #[error("unsupported method: {0}")]
    UnsupportedMethod(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("moment restrictions infeasible at this parameter: {0}")]
    Infeasible(String),

    #[error("optimal probability vector touches the simplex boundary (min q = {min_q:e})")]
    BoundaryDegenerate { min_q: f64 },

    #[error("degenerate Jacobian: Gram matrix min eigenvalue {min_eigenvalue:e}")]
    DegenerateJacobian { min_eigenvalue: f64 },

    #[error("no maximum likelihood start converged")]
    NoConvergedStart,

    #[error("invalid zero pattern: {0}")]
    InvalidPattern(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),
}

impl Error {
    /// Short class label used when failures are serialized as data.
    pub fn class(&self) -> &'static str {
        match self {
            Error::NotPositiveSemidefinite { .. } => "NotPositiveSemidefinite",
            Error::SingularUpdate { .. } => "SingularUpdate",
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::OutOfDomain => "OutOfDomain",
            Error::InvalidSimplex(_) => "InvalidSimplex",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::DimensionTooLarge { .. } => "DimensionTooLarge",
            Error::DegenerateWeights { .. } => "DegenerateWeights",
            Error::UnsupportedMethod(_) => "UnsupportedMethod",
            Error::PreconditionViolated(_) => "PreconditionViolated",
            Error::Infeasible(_) => "Infeasible",
            Error::BoundaryDegenerate { .. } => "BoundaryDegenerate",
            Error::DegenerateJacobian { .. } => "DegenerateJacobian",
            Error::NoConvergedStart => "NoConvergedStart",
            Error::InvalidPattern(_) => "InvalidPattern",
            Error::RankDeficient(_) => "RankDeficient",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
