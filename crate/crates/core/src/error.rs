use thiserror::Error;

use crate::solvers::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

/// Why an iterative solve stopped without meeting its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveFailure {
    MaxIterExceeded { iterations: usize },
    /// Step sizes grew for three consecutive iterations, or an iterate became non-finite.
    Divergence { iteration: usize },
    SingularJacobian { iteration: usize },
}

impl std::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolveFailure::MaxIterExceeded { iterations } => {
                write!(f, "MaxIterExceeded: no convergence after {iterations} iterations")
            }
            SolveFailure::Divergence { iteration } => {
                write!(f, "DivergenceError: iteration diverged at step {iteration}")
            }
            SolveFailure::SingularJacobian { iteration } => {
                write!(f, "SingularJacobian: derivative not invertible at iteration {iteration}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("unknown identifier '{name}' at position {position}")]
    UnknownIdentifier { name: String, position: usize },

    #[error("missing binding for variable '{0}'")]
    MissingBinding(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("unsupported dimension {0} (only 1 or 2 supported)")]
    UnsupportedDimension(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("grid function is empty")]
    EmptyFunction,

    #[error("linear kernel must not depend on u")]
    KernelUsesU,

    #[error("hammerstein derivative override disagrees with symbolic derivative (max abs difference {max_diff:e})")]
    DerivativeMismatch { max_diff: f64 },

    #[error("matrix is singular (pivot {pivot:e} at column {column})")]
    SingularMatrix { pivot: f64, column: usize },

    #[error("linear solve inaccurate: residual {residual:e} exceeds bound {bound:e}")]
    InaccurateSolve { residual: f64, bound: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("problem has no hammerstein kernel")]
    MissingHammerstein,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{failure}")]
    SolveFailed {
        failure: SolveFailure,
        partial: Box<SolveReport>,
    },

    #[error("continuation failed at t = {t}: {source}")]
    ContinuationFailed {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown example '{0}'")]
    UnknownExample(String),

    #[error("invalid problem file: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
