use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is singular or not positive definite (pivot {pivot:.3e} at index {index})")]
    Singular { index: usize, pivot: f64 },

    #[error("rank-deficient columns: {0}")]
    RankDeficient(String),

    /// Carries the best iterate found before the iteration cap was hit.
    #[error("{solver} did not converge after {iterations} iterations (gap {gap:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        gap: f64,
        best: Vec<f64>,
    },

    #[error("active-set cycling detected after {iterations} iterations")]
    Cycling { iterations: usize, best: Vec<f64> },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("bound is undefined: {0}")]
    UndefinedBound(String),

    #[error("homotopy path exceeded {0} breakpoints")]
    RunawayPath(usize),

    #[error("design generation failed: {0}")]
    Generation(String),

    #[error("cross-check failed: {0}")]
    CrossCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of a numerical routine, as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::RankDeficient(_)
                | Error::NonConvergence { .. }
                | Error::Cycling { .. }
                | Error::UndefinedBound(_)
                | Error::RunawayPath(_)
                | Error::CrossCheck(_)
        )
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

pub(crate) fn mismatch<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::DimensionMismatch(msg.into()))
}
