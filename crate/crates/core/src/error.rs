use thiserror::Error;

pub type Result<T, E = NagError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NagError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("{op} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        op: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("divergence at layer {layer}: {reason}")]
    Divergence { layer: usize, reason: String },

    #[error("residual audit failed at t = {t}: identity residual {residual:e} exceeds {tolerance:e}")]
    AuditFailure {
        t: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("gram matrix of size {dim} exceeds the materialization cap {cap}; use the operator form")]
    SizeGuard { dim: usize, cap: usize },

    #[error("infeasible dataset: {0}")]
    InfeasibleData(String),

    #[error("rate fit needs at least {needed} usable points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NagError {
    pub(crate) fn dim(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        NagError::Dimension { op, lhs, rhs }
    }
}
