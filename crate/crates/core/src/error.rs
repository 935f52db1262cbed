use thiserror::Error;

pub type Result<T, E = FunnelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FunnelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },

    #[error("linearization failed at t = {t}: {reason}")]
    Linearization { t: f64, reason: String },

    #[error("degenerate sampling region at node {node}")]
    DegenerateRegion { node: usize },

    #[error(
        "lipschitz constant {gamma} at node {node} is below the minimum {min}; \
         for a purely linear system use n_p = n_q = 0 instead"
    )]
    ZeroLipschitz { node: usize, gamma: f64, min: f64 },

    #[error("nominal violates {family} constraint {index} at node {node} (margin {margin})")]
    InfeasibleNominal {
        family: &'static str,
        node: usize,
        index: usize,
        margin: f64,
    },

    #[error("integration failed on [{t0}, {t1}]: {reason}")]
    Integration { t0: f64, t1: f64, reason: String },

    #[error("discretization failed on interval {interval}: {reason}")]
    Discretization { interval: usize, reason: String },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("unsupported funnel file version {0:?}")]
    UnsupportedVersion(String),

    #[error("config validation failed:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
