use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lexicon directory {0} does not exist")]
    MissingLexicon(PathBuf),

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0} has no phrase lists")]
    NoPhraseLists(&'static str),

    #[error("phrase is empty after normalization")]
    EmptyPhrase,

    #[error("duplicate report id {0:?}")]
    DuplicateReport(String),

    #[error("unknown report id {0:?}")]
    UnknownReport(String),

    #[error("unexpected CSV header: {0}")]
    Header(String),

    #[error("report {report_id:?} is missing from the {side} labels")]
    Unmatched {
        report_id: String,
        side: &'static str,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
