use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown event kind `{kind}`")]
    UnknownKind { line: usize, kind: String },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no precomputed embedding for content_ref `{0}`")]
    MissingEmbedding(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("IRLS did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("missing metadata for site `{0}`")]
    MissingMetadata(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
