use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no boxes")]
    NoBoxes,
    #[error("invalid bounding box {0:?}")]
    InvalidBox([f64; 4]),
    #[error("document `{doc}`: {msg}")]
    InvalidDocument { doc: String, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("schema version mismatch: expected `{expected}`, found `{found}`")]
    Version { expected: String, found: String },
    #[error("malformed box in entity {entity}: {msg}")]
    MalformedEntity { entity: i64, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(String),
    #[error("config: {0}")]
    Config(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite {0} loss")]
    NonFinite(String),
    #[error("label: {0}")]
    Label(String),
    #[error("synthetic corpus: {0}")]
    Synthetic(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("embedding table: {0}")]
    Embedding(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn doc(doc: &str, msg: impl Into<String>) -> Self {
        Error::InvalidDocument {
            doc: doc.to_string(),
            msg: msg.into(),
        }
    }
}
