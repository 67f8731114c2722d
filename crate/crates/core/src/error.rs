use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Wrong magic, unsupported version or malformed text input.
    #[error("format error: {0}")]
    Format(String),

    /// Structurally broken file: truncation, inconsistent lengths, trailing bytes.
    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty pairing: source and target share no (subject_id, sample_id) keys")]
    EmptyPairing,

    #[error(
        "rank-deficient system: pivot {pivot} of {size} vanished; \
         the source Gram matrix is singular, retry with a ridge penalty (e.g. --ridge 1e-6)"
    )]
    RankDeficient { pivot: usize, size: usize },

    #[error("calibration error: {0}")]
    Calibration(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub(crate) fn corruption(msg: impl Into<String>) -> Self {
        Self::Corruption(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Self::Format(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Self::Io(io),
            other => Self::Format(format!("csv: {other:?}")),
        }
    }
}
