use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("ingestion error at line {line}: {message}")]
    Ingest { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("stimulus {stimulus} has an all-zero vector")]
    ZeroRow { stimulus: usize },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("could not parse agent reply: {0}")]
    Parse(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("training diverged at epoch {epoch} (last good checkpoint at epoch {last_good_epoch})")]
    Divergence {
        epoch: usize,
        last_good_epoch: usize,
        last_good: Box<crate::spose::Embedding>,
    },

    #[error("did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Config,
            Error::Undefined(_) | Error::Divergence { .. } | Error::NonConvergence { .. } => {
                ErrorClass::Numeric
            }
            _ => ErrorClass::Data,
        }
    }
}
