use thiserror::Error;

use crate::newton::NewtonError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("interpolation nodes {0} and {1} coincide")]
    DuplicateNodes(usize, usize),

    #[error("vectors are rank deficient at column {column} (pivot {pivot:e})")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("problem carries no constraint metadata")]
    MissingConstraint,

    #[error("inconsistent initial data: {0}")]
    InconsistentInitialData(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Newton(#[from] NewtonError),

    #[error("time step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: NewtonError,
    },
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
