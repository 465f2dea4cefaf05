use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NngpError {
    #[error("locations {first} and {second} share the coordinates ({x}, {y})")]
    DuplicateLocation {
        first: usize,
        second: usize,
        x: f64,
        y: f64,
    },
    #[error("location {index} has a non-finite coordinate")]
    NonFiniteCoordinate { index: usize },
    #[error("at least one location is required")]
    EmptyLocations,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("conditional variance {value:e} at row {row} is below the positivity floor")]
    NonPositiveConditionalVariance { row: usize, value: f64 },
    #[error("neighbor covariance block at row {row} is not positive definite")]
    SingularNeighborBlock { row: usize },
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("log-likelihood is not finite at the initial parameters")]
    NonFiniteLikelihood,
    #[error("matrix is not positive definite (smallest eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { eigenvalue: f64 },
    #[error("n = {n} exceeds the dense-matrix limit of {limit}")]
    TooLargeForDense { n: usize, limit: usize },
    #[error("bootstrap produced only {succeeded} usable replicates ({failed} failed)")]
    InsufficientReplicates { succeeded: usize, failed: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
}

pub type Result<T> = std::result::Result<T, NngpError>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(NngpError::DimensionMismatch { expected, found })
    }
}
