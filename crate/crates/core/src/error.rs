use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum SfeError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("degenerate outcome: all outcome values are equal")]
    DegenerateOutcome,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index {index} out of range for {len} individuals")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        trace: Vec<f64>,
    },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("unknown factor `{0}`")]
    UnknownFactor(String),
    #[error("undefined angle: column `{0}` has zero norm after centering")]
    UndefinedAngle(String),
    #[error("coincident positions")]
    CoincidentPositions,
    #[error("rank deficient design: {0}")]
    RankDeficient(String),
    #[error("logistic regression did not converge after {iterations} iterations (last change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64 },
    #[error("csv parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("malformed effect-space file: {0}")]
    MalformedSpace(String),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SfeError>;
