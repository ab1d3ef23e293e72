use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sample rate {0} Hz (expected {1})")]
    InvalidRate(u32, &'static str),

    #[error("signal too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input segment is not clean: {0}")]
    UncleanInput(String),

    #[error("run [{start}, {end}) outside segment of length {len}")]
    Range { start: usize, end: usize, len: usize },

    #[error("segment cannot be filled: no clean anchor samples")]
    Unfillable,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("stage ordering: {0}")]
    StageOrder(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable code, used by the CLI's `ERROR <code>:` prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidRate(..) => "invalid-rate",
            Error::TooShort { .. } => "too-short",
            Error::OutOfRange(_) => "out-of-range",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::UncleanInput(_) => "unclean-input",
            Error::Range { .. } => "range",
            Error::Unfillable => "unfillable",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::Precondition(_) => "precondition",
            Error::Diverged(_) => "diverged",
            Error::StageOrder(_) => "stage-order",
            Error::Checkpoint(_) => "checkpoint",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Whether the failure stems from bad input (as opposed to a runtime fault).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Diverged(_))
    }
}
