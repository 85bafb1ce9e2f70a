use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::DocRef;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    MalformedInput { path: PathBuf, detail: String },

    #[error("unknown document reference {0}")]
    UnknownDocRef(DocRef),

    #[error("invalid document id {0:?}")]
    InvalidDocId(String),

    #[error("document ordinal {ordinal} out of range for index of {n_docs} documents")]
    OutOfRange { ordinal: usize, n_docs: usize },

    #[error("no key points found in model response")]
    KeyPointParse,

    #[error("reference list is empty")]
    EmptyReferenceList,

    #[error("matrix entry ({row}, {col}) is not finite")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("matrix rows have inconsistent lengths")]
    RaggedMatrix,

    #[error("no gold annotation for claim {0}")]
    MissingGold(usize),

    #[error("claim {0}: prediction text does not match the gold claim")]
    ClaimMismatch(usize),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::MalformedInput {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
