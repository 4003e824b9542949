use alloc::string::String;

/// Errors raised by the solvers and their building blocks.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid observation set: {0}")]
    InvalidObservations(String),
    #[error("matrix does not have orthonormal columns (deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("diagonal scaling must be nonnegative")]
    NegativeDiagonal,
    #[error("backtracking did not certify a step after {0} expansions")]
    BacktrackingBreakdown(usize),
    #[error("brute-force oracle limited to {max} columns, got {got}")]
    TooManyColumns { max: usize, got: usize },
    #[error("reference matrix has zero norm")]
    ZeroNorm,
    #[error("held-out set is empty")]
    EmptyHeldOut,
    #[error("singular value decomposition failed to converge")]
    SvdFailure,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}

pub(crate) fn param_err(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
