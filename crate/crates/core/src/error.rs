use thiserror::Error;

use crate::model::SchemeViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("insufficient anchors: need {needed}, have {available}")]
    InsufficientAnchors { needed: usize, available: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),

    #[error("invalid probe scheme: {0}")]
    InvalidScheme(SchemeViolation),

    #[error("anchor index {index} out of range 1..={n}")]
    AnchorIndex { index: usize, n: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("amplitude degenerate: |c0| = {c0}, |c1| = {c1}")]
    AmplitudeDegenerate { c0: f64, c1: f64 },

    #[error("step resolution too coarse: {per_step} rad per step (limit 0.1)")]
    Resolution { per_step: f64 },

    #[error("qubit capacity exceeded: {0} > {max}", max = crate::qsim::MAX_QUBITS)]
    Capacity(usize),

    #[error("degenerate state: branch amplitude vanishes")]
    DegenerateState,

    #[error("missing parameter: {0}")]
    MissingParameter(&'static str),

    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("fisher information undefined at rho = 0")]
    UndefinedInformation,

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
