use thiserror::Error;

use crate::keygen::AgencyId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("could not draw a matrix with condition number <= {limit:e} after {attempts} attempts")]
    ResampleExhausted { limit: f64, attempts: usize },

    #[error("materialized key is ill-conditioned (cond {cond:e} > {limit:e})")]
    SingularResult { cond: f64, limit: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("design matrix is rank deficient ({0})")]
    RankDeficient(String),

    #[error("matrix is singular")]
    Singular,

    #[error("agency {0} already applied its pass to this shard")]
    DuplicatePass(AgencyId),

    #[error("agency {0} already applied its decryption round")]
    DoubleDecrypt(AgencyId),

    #[error("protocol order violation: {0}")]
    ProtocolOrderViolation(String),

    #[error("transport failure: {0}")]
    TransportFailure(String),

    #[error("wire format error: {0}")]
    Wire(String),

    #[error("fold layout is not aligned to orthogonal blocks: {0}")]
    FoldBlockMisaligned(String),

    #[error("AUC needs both classes present")]
    SingleClass,

    #[error("CSV parse error at line {line}, column {col}: {msg}")]
    ParseError { line: usize, col: usize, msg: String },

    #[error("non-numeric cell at line {line}, column {col}: {value:?}")]
    NonNumericCell { line: usize, col: usize, value: String },

    #[error("response column {0:?} not found")]
    MissingResponse(String),

    #[error("cannot split {n} samples across {k} agencies")]
    TooManyAgencies { n: usize, k: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable variant name for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimMismatch(_) => "DimMismatch",
            Error::ResampleExhausted { .. } => "ResampleExhausted",
            Error::SingularResult { .. } => "SingularResult",
            Error::NotPositiveDefinite => "NotPositiveDefinite",
            Error::RankDeficient(_) => "RankDeficient",
            Error::Singular => "Singular",
            Error::DuplicatePass(_) => "DuplicatePass",
            Error::DoubleDecrypt(_) => "DoubleDecrypt",
            Error::ProtocolOrderViolation(_) => "ProtocolOrderViolation",
            Error::TransportFailure(_) => "TransportFailure",
            Error::Wire(_) => "Wire",
            Error::FoldBlockMisaligned(_) => "FoldBlockMisaligned",
            Error::SingleClass => "SingleClass",
            Error::ParseError { .. } => "ParseError",
            Error::NonNumericCell { .. } => "NonNumericCell",
            Error::MissingResponse(_) => "MissingResponse",
            Error::TooManyAgencies { .. } => "TooManyAgencies",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io(_) => "Io",
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }
}
