use thiserror::Error;

/// Errors raised by the geometry, path and solver routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("matrix is not positive definite (min eigenvalue {min}, max eigenvalue {max})")]
    NotPositiveDefinite { min: f64, max: f64 },

    #[error("squared-generator matrix has a negative eigenvalue {value} (largest {max})")]
    NegativeSpectrum { value: f64, max: f64 },

    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),

    #[error("random orthogonal draw degenerate after {0} retries")]
    DegenerateDraw(usize),

    #[error("matrix is not orthogonal (max deviation {0})")]
    NotOrthogonal(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("target is not one of the closed-form special cases")]
    NotSpecialCase,

    #[error(
        "small-x approximation is singular: target covariance has eigenvalue {0} too close to 1"
    )]
    SingularTaylor(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, GeoError>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(GeoError::DimensionMismatch { expected, found });
    }
    Ok(())
}
