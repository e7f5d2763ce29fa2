use thiserror::Error;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("model invariant violated: {0}")]
    Invariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value during {0}")]
    NonFinite(String),

    #[error("divergence guard tripped: |F| = {value:.3e} at iteration {iteration}")]
    Diverged { iteration: usize, value: f64 },

    #[error("ground truth required for {0}")]
    MissingGroundTruth(&'static str),

    #[error("cost must be quadratic (p = 2) for {0}")]
    NonQuadraticCost(&'static str),

    #[error("{0} samples exceed the exact-matching limit of {1}; subsample first")]
    TooManySamples(usize, usize),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("invalid index map: {0}")]
    IndexMap(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, OtError>;
