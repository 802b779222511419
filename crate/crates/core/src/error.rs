use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Row numbers are 1-based data-row indices (the header is not counted).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("EmptyFile: no header or no data rows")]
    EmptyFile,
    #[error("MissingColumn: `{0}` not found in header")]
    MissingColumn(String),
    #[error("BadLabel: row {row}: label `{value}` is not 0 or 1")]
    BadLabel { row: usize, value: String },
    #[error("RaggedRow: row {0} has a different number of fields than the header")]
    RaggedRow(usize),
    #[error("NonFiniteValue: row {row}, column `{column}`")]
    NonFiniteValue { row: usize, column: String },
    #[error("ScoreOutOfRange: row {row}: score {value} is outside [0, 1]")]
    ScoreOutOfRange { row: usize, value: f64 },
    #[error("DimensionMismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("Io: {0}")]
    Io(String),

    #[error("UnknownGroup: `{0}`")]
    UnknownGroup(String),
    #[error("EmptyGroup: `{0}` has no records")]
    EmptyGroup(String),
    #[error("NoFeatures: dataset has feature dimension 0")]
    NoFeatures,
    #[error("NonPSDCovariance: smallest eigenvalue {0:e}")]
    NonPSDCovariance(f64),

    #[error("MissingScore: row {0} has no score")]
    MissingScore(usize),
    #[error("FewerThanTwoGroups: fairness gap needs at least two groups, found {0}")]
    FewerThanTwoGroups(usize),
    #[error("MissingConditional: group `{group}` has no {sign} samples")]
    MissingConditional { group: String, sign: &'static str },
    #[error("BadM: M = {m} is below the observed maximum loss {observed}")]
    BadM { m: f64, observed: f64 },
    #[error("DegenerateSlice: slice needs at least one positive and one negative")]
    DegenerateSlice,
    #[error("EmptySlice")]
    EmptySlice,
    #[error("OutOfRange: {0}")]
    OutOfRange(String),

    #[error("InvalidParams({field}): {reason}")]
    InvalidParams { field: String, reason: String },
    #[error("SampleTooSmall: m = {m} < d_vc = {d_vc}")]
    SampleTooSmall { m: u64, d_vc: u64 },

    #[error("SingleClass: training data contains only one class")]
    SingleClass,
    #[error("NonConvergent: loss increased for {0} consecutive epochs")]
    NonConvergent(usize),
    #[error("EmptyClass: function class has no members")]
    EmptyClass,
    #[error("ModelFormat: {0}")]
    ModelFormat(String),

    #[error("NonPSD: covariance of `{0}` is not positive semi-definite")]
    NonPSD(String),
    #[error("BadWeights: {0}")]
    BadWeights(String),
    #[error("DegenerateExcess: mean excess risk is zero at m = {0}; nothing to fit")]
    DegenerateExcess(u64),
}

impl Error {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParams {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
