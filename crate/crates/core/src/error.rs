use thiserror::Error;

/// Errors raised by the reconstruction core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TomoError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("input too large for direct evaluation: side {side} exceeds {limit}")]
    SizeGuard { side: usize, limit: usize },

    #[error("operator is numerically zero; cannot estimate its spectral norm")]
    ZeroOperator,

    #[error("non-finite objective at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("worker communication failed: {0}")]
    Communication(String),
}

pub type Result<T> = std::result::Result<T, TomoError>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(TomoError::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}
