use thiserror::Error;

/// Errors raised by the design toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A model, design, space or criterion violates one of its invariants.
    #[error("validation error: {0}")]
    Validation(String),

    /// The linear combination `cᵀθ` is not estimable under the design.
    #[error("c is not in the range of the information matrix")]
    NotEstimable,

    #[error("information matrix is singular: {0}")]
    SingularMatrix(String),

    /// The support matrix used by the optimal-weight formula is numerically singular.
    #[error("support matrix is numerically singular")]
    SingularSystem,

    #[error("criterion {0} has no closed-form design")]
    UnsupportedCriterion(String),

    #[error("unsupported design space: {0}")]
    UnsupportedSpace(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("cannot apportion {n} runs over {support} support points")]
    InfeasibleApportionment { n: usize, support: usize },

    /// The smallest eigenvalue of the information matrix is not simple.
    #[error("minimum eigenvalue is not simple (gap {gap:e})")]
    MultipleMinEigenvalue { gap: f64 },

    #[error("{failed} of {replicates} fits failed")]
    TooManyFailedFits { failed: usize, replicates: usize },

    #[error("least-squares fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("design has {distinct} informative points, at least 3 are required")]
    InsufficientDesign { distinct: usize },
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularMatrix(_)
                | Error::SingularSystem
                | Error::NoConvergence(_)
                | Error::MultipleMinEigenvalue { .. }
                | Error::TooManyFailedFits { .. }
                | Error::NotConverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
