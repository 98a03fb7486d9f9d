use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported model: {kind} with n = {n} (supported: CR n = 1, CR n = 2, QC n = 1)")]
    UnsupportedModel { kind: String, n: usize },

    #[error("grid incompatible with the lattice: {0}")]
    GridIncompatible(String),

    #[error("index {index} out of range (expected {expected})")]
    IndexOutOfRange { index: usize, expected: String },

    #[error("non-finite value encountered in {0}")]
    NonFiniteValue(&'static str),

    #[error("field is not strictly positive (min = {min:e})")]
    NotPositive { min: f64 },

    #[error("field is not wrap-consistent (residual {0:e})")]
    NotWrapConsistent(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("U-term requested on a qc model with n = 1, where it is dropped")]
    UTermAtN1,

    #[error("positivity lost at step {step} (min u = {min:e}); use a smaller dt or smoother data")]
    PositivityLost { step: usize, min: f64 },

    #[error("dt = {dt:e} exceeds the stability bound {limit:e}")]
    StabilityViolated { dt: f64, limit: f64 },

    #[error("insufficient samples: need at least {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("malformed input: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
