use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    /// A nonzero numerator met a zero denominator. For optimizer steps this
    /// means the moment state is corrupt.
    #[error("division domain error at coordinate {index}: {num} / 0")]
    DivisionDomain { index: usize, num: f64 },

    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("no even C <= {cap} satisfies the conditions (residuals at cap: {residuals:?})")]
    SearchExhausted { cap: u64, residuals: [f64; 3] },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("usage error in `{field}`: {msg}")]
    Usage { field: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn usage(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Usage {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
