use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid pattern mask {bits:#011b}: expected exactly 4 of 9 bits set")]
    InvalidMask { bits: u16 },

    #[error("invalid pattern library: {0}")]
    InvalidLibrary(String),

    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("selection vector has {got} entries but the library holds {expected} patterns")]
    SelectionSize { got: usize, expected: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("model is not pattern-pruned: {0}")]
    NotPatternPruned(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
