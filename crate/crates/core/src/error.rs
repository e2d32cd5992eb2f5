use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("no usable rows after ingestion")]
    NoUsableRows,

    #[error("row {row}, column '{column}': {message}")]
    InvalidCell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("no events of interest in the data")]
    NoEvents,

    #[error("design matrix is rank deficient; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("nonconvergence: {0}")]
    NonConvergence(String),

    #[error("degenerate split: predictor does not separate into two groups")]
    DegenerateSplit,

    #[error("unknown stratum level '{0}'")]
    UnknownStratum(String),

    #[error("unknown level '{level}' for column '{column}'")]
    UnknownLevel { column: String, level: String },

    #[error("unknown cause code {0}")]
    UnknownCause(u32),

    #[error("CI unsupported for this family")]
    CiUnsupported,

    #[error("censoring support exhausted; shrink tau")]
    CensoringExhausted,

    #[error("no comparable pairs")]
    NoComparablePairs,

    #[error("bootstrap: {failed} of {total} resamples failed to fit")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("model specification violations: {}", .0.join("; "))]
    Violations(Vec<String>),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Fitting failures caused by the optimizer rather than by malformed input.
    pub fn is_nonconvergence(&self) -> bool {
        matches!(self, Error::NonConvergence(_) | Error::BootstrapFailures { .. })
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
