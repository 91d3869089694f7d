use thiserror::Error;

/// Error type shared by the whole crate.
#[derive(Debug, Error)]
pub enum McuError {
    #[error("column {0} has zero sample variance")]
    ZeroVarianceColumn(usize),
    #[error("input contains a non-finite entry at ({0}, {1})")]
    NonFiniteInput(usize, usize),
    #[error("every response column is constant; global scale is undefined")]
    AllZeroVariance,
    #[error("k = {k} must satisfy 1 <= k < N = {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("symmetric eigendecomposition failed")]
    EigenFailure,
    #[error("solver did not converge within {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("no feasible initial point available")]
    InfeasibleStart,
    #[error("ridge system is singular at lambda = 0")]
    SingularSystem,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("reference vector has zero norm")]
    ZeroReference,
    #[error("no positive eigenvalues")]
    AllZero,
    #[error("bad base image: {0}")]
    BadBaseImage(String),
    #[error("bad base cloud: {0}")]
    BadBaseCloud(String),
    #[error("missing model bundle for method {0}")]
    MissingBundle(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, McuError>;
