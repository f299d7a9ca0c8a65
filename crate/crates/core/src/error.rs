use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input to log density at z = {z:?}")]
    NonFiniteInput { z: Vec<f64> },

    /// The target produced a non-finite value or gradient at `z`.
    #[error("target `{model}` returned a non-finite value at z = {z:?}")]
    NonFiniteTarget { model: String, z: Vec<f64> },

    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown model `{name}`; valid models: {valid}")]
    UnknownModel { name: String, valid: String },

    #[error("unknown preset `{name}`; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error("numerically degenerate parameters: {0}")]
    Degenerate(String),

    /// Laplace initialization found a point where the negative Hessian is
    /// not positive definite.
    #[error("Laplace initialization failed: {0}")]
    LaplaceFailure(String),

    #[error("every step-size candidate diverged")]
    AllDiverged,

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("key mismatch between result tables; missing: {0}")]
    KeyMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
