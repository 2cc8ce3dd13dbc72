use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("brute-force transport limited to 8 points, got {0}")]
    TooLarge(usize),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("covariance matrix is not positive semi-definite")]
    NotPositiveSemiDefinite,

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("non-finite value produced by node {node} ({op})")]
    NonFiniteNode { node: usize, op: &'static str },

    #[error("gradient root must be a scalar, node has {0} entries")]
    NonScalarRoot(usize),

    #[error("program is not deterministic: two forward passes disagree ({first} vs {second})")]
    NonDeterministic { first: f64, second: f64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("integration blew up at step {step}")]
    BlowUp { step: usize },

    #[error("no anchor has at least {min_count} neighbors")]
    NoQualifyingAnchors { min_count: usize },

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("cannot parse {value:?} at row {row}, column {column:?}")]
    Parse { row: usize, column: String, value: String },

    #[error("malformed checkpoint line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for bad inputs or configuration, false for numeric or I/O failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::SizeMismatch { .. }
                | Error::DimensionMismatch { .. }
                | Error::Empty(_)
                | Error::InvalidParameter(_)
                | Error::TooLarge(_)
                | Error::TooFewSamples { .. }
                | Error::MissingColumn(_)
                | Error::Parse { .. }
                | Error::Checkpoint { .. }
                | Error::Csv(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
