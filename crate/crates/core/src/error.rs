use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("heterogeneity constraints unsatisfiable: {0}")]
    Heterogeneity(String),

    #[error("target leverage η = {eta} must exceed 1")]
    LeverageTooLow { eta: f64 },

    #[error("portfolio variance σ_s² + σ_d²/(αq) is zero")]
    ZeroPortfolioVariance,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("institution {institution} is insolvent (equity {equity})")]
    Insolvent { institution: usize, equity: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing diagonalization estimate for classification")]
    MissingTruth,

    #[error("malformed triplet file at line {line}: {reason}")]
    Triplet { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
