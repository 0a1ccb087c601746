use std::path::PathBuf;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("tree {doc_id}: node {node}: {message}")]
    Parse {
        doc_id: String,
        node: String,
        message: String,
    },

    #[error("tree {doc_id}: {message}")]
    InvalidTree { doc_id: String, message: String },

    #[error("featurization failed at node {node}: {message}")]
    Featurize { node: usize, message: String },

    #[error("node {node} has {found} children, the N-ary cell needs exactly 2")]
    Arity { node: usize, found: usize },

    #[error("node {node}: {message}")]
    State { node: usize, message: String },

    #[error("child {node} carries no nucleus/satellite label")]
    MissingHierarchy { node: usize },

    #[error("operation not applicable: {0}")]
    NotApplicable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("loss diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("AUC is undefined when only one class is present")]
    AucUndefined,

    #[error("unsupported model variant for {0}")]
    UnsupportedVariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
