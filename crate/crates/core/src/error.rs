use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("eigensolver failed to converge (relative residual {residual:e})")]
    Convergence { residual: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("stochasticity violated at ({row}, {col}): {value}")]
    Stochasticity { row: usize, col: usize, value: f64 },

    #[error("singular evaluation: {0}")]
    Singular(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("incompatible pairing: {0}")]
    Incompatible(String),

    #[error("column-sum defect is not constant (spread {spread:e})")]
    NonConstantShift { spread: f64 },

    #[error("site collision: {0}")]
    SiteCollision(String),

    #[error("configuration unreachable on the sampled grid (max coefficient {max:e})")]
    Unreachable { max: f64 },

    #[error("Bethe vector vanished")]
    NullVector,
}

pub type Result<T> = std::result::Result<T, Error>;
