use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: unknown topic `{topic}`")]
    UnknownTopic {
        path: PathBuf,
        line: usize,
        topic: String,
    },

    #[error("{path}:{line}: summary references unknown article_id `{article_id}`")]
    DanglingArticle {
        path: PathBuf,
        line: usize,
        article_id: String,
    },

    #[error("{path}:{line}: invalid record: {message}")]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown {what} `{value}`")]
    UnknownFilter { what: &'static str, value: String },

    #[error("workspace {0} is locked by another writer")]
    Locked(PathBuf),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("empty distribution for `{0}`")]
    EmptyDistribution(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by absent records or cells rather than bad input.
    pub fn is_missing_data(&self) -> bool {
        matches!(
            self,
            Error::MissingData(_) | Error::EmptyDistribution(_) | Error::DanglingArticle { .. }
        )
    }
}
