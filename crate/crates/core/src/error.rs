use thiserror::Error;

/// Errors raised by the geometric, simulation and synthesis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("inertia matrix is singular or ill-conditioned (condition number {condition:.3e})")]
    SingularInertia { condition: f64 },

    #[error("invalid inertia matrix: {0}")]
    InvalidInertia(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("input vector fields are rank deficient at q = {q:?}")]
    RankDeficient { q: Vec<f64> },

    #[error("span assumption violated: residual {residual:.3e} at q = {q:?}")]
    AssumptionViolation { residual: f64, q: Vec<f64> },

    #[error("no real decoupling direction at q = {q:?}")]
    NoDecouplingField { q: Vec<f64> },

    #[error("segment {segment}: input reconstruction residual {residual:.3e} at sample {sample} exceeds {tolerance:.1e}")]
    ResidualViolation {
        segment: usize,
        sample: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid model descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SingularInertia { .. } => "singular-inertia",
            Error::InvalidInertia(_) => "invalid-inertia",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NonFiniteState { .. } => "non-finite-state",
            Error::Precondition(_) => "precondition",
            Error::RankDeficient { .. } => "rank-deficient",
            Error::AssumptionViolation { .. } => "assumption-violation",
            Error::NoDecouplingField { .. } => "no-decoupling-field",
            Error::ResidualViolation { .. } => "residual-violation",
            Error::UnknownModel(_) => "unknown-model",
            Error::InvalidDescriptor(_) => "invalid-descriptor",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
