use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("ordering is not a permutation: {0}")]
    NotAPermutation(String),

    #[error("invalid budget split: {0}")]
    InvalidSplit(String),

    #[error("invalid pricing: {0}")]
    InvalidPricing(String),

    #[error("pipeline config error: {0}")]
    Config(String),

    #[error("unknown backend `{0}`")]
    UnknownBackend(String),

    #[error("query {0}: passage(s) lack an initial score")]
    MissingScores(String),

    #[error("cannot aggregate an empty corpus")]
    EmptyCorpus,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate query id `{0}`")]
    DuplicateQueryId(String),

    #[error("no corpus text for document `{0}`")]
    MissingCorpusText(String),

    #[error("template error: {0}")]
    Template(String),

    #[error(transparent)]
    Backend(#[from] crate::backends::BackendError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
