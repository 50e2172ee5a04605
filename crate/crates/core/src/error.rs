use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group kind: {0}")]
    InvalidKind(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("group kind mismatch: {left} vs {right}")]
    KindMismatch { left: String, right: String },

    #[error("matrix is not in the Lie algebra (defect {defect:.3e})")]
    NotInAlgebra { defect: f64 },

    #[error("matrix is not on the group (defect {defect:.3e})")]
    NotOnGroup { defect: f64 },

    #[error("operation requires an abelian (torus) group, got {0}")]
    NotAbelian(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off:.3e})")]
    NoConvergence { sweeps: usize, off: f64 },

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::NoConvergence { .. } | Error::NotOnGroup { .. }
        )
    }
}
