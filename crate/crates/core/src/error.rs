use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum FbsdeError {
    #[error("invalid utility family parameters: {0}")]
    InvalidFamilyParams(String),

    #[error("quadrature did not converge at x = {x} within {budget} nodes")]
    QuadratureNonConvergence { x: f64, budget: usize },

    #[error("invalid market specification: {0}")]
    InvalidMarket(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("x-axis [{lo}, {hi}] leaves margin {margin:.4} around x0 = {x0}, need at least {required:.4}")]
    DomainTooSmall {
        lo: f64,
        hi: f64,
        x0: f64,
        margin: f64,
        required: f64,
    },

    #[error("fixed point did not converge at t = {t}, node {node:?}")]
    FixedPointFailure { t: f64, node: Vec<f64> },

    #[error("decoupling field became singular at t = {t} (max |u_x| = {lip:.6})")]
    SingularityDetected { t: f64, lip: f64 },

    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("condition gate failed: {0}")]
    GateFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = FbsdeError> = std::result::Result<T, E>;
