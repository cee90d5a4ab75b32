use thiserror::Error;

/// Errors raised by the numerical layers of the lab.
///
/// Partial objects that are "undefined" at a phase (no spectral gap, no
/// transversality) are not errors in the orbit pipelines; they are recorded
/// as [`crate::oseledets::PartialDirection`] values instead. The variants
/// below are reserved for contract violations and for the single-matrix
/// operations where the caller asked for something that does not exist.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("index {index} out of range (valid: {lo}..={hi})")]
    IndexOutOfRange { index: usize, lo: usize, hi: usize },

    #[error("no singular-value gap at k={k}: gr_k = {ratio}")]
    DegenerateGap { k: usize, ratio: f64 },

    #[error("zero matrix where a nonzero norm is required")]
    ZeroMatrix,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid signature: {0}")]
    InvalidSignature(String),

    #[error("signature mismatch: expected {expected:?}, got {got:?}")]
    SignatureMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("{coarse:?} is not refined by {fine:?}")]
    NotARefinement { fine: Vec<usize>, coarse: Vec<usize> },

    #[error("flags are not transversal at pair {pair}: theta = {theta}")]
    NonTransversal { pair: usize, theta: f64 },

    #[error("invalid flag: {0}")]
    InvalidFlag(String),

    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("invalid base system: {0}")]
    InvalidBase(String),

    #[error("unknown catalog entry `{0}`")]
    UnknownName(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("phase kind does not match the base system")]
    PhaseMismatch,

    #[error("n = {n} is below r*n0 = {min} for the requested doubling sequence")]
    InfeasibleRange { n: u64, min: u64 },

    #[error("no admissible avalanche schedule: {0}")]
    NoSchedule(String),

    #[error("avalanche hypothesis fails at index {index}: {condition}")]
    HypothesisFailure { index: usize, condition: String },

    #[error("object undefined: {0}")]
    Undefined(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
