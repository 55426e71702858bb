use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by how a caller should react: `Domain`, `Hypothesis`,
/// and `Schema` indicate invalid inputs, `Numerical` indicates an algorithm
/// that failed to converge or produced non-finite values, and the remaining
/// variants wrap I/O and serialization failures.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A bound was requested for an instance that does not satisfy the
    /// hypothesis under which the bound holds.
    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),

    /// Structured data (JSON files, tables) failed validation.
    #[error("schema error: {0}")]
    Schema(String),

    /// An iterative numerical routine diverged or produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of numerical algorithms, as opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
