use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not a word: {0:?}")]
    NotAWord(String),

    #[error("text contains no words")]
    NoWords,

    #[error("n-gram order must be at least 1")]
    ZeroOrder,

    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("no FK weight for vocabulary word {0:?}")]
    MissingWeight(String),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("no precomputed score for candidate {0:?}")]
    MissingScore(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("{documents} documents but {outputs} outputs")]
    LengthMismatch { documents: usize, outputs: usize },

    #[error("document {id}: {source}")]
    Document {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("judge request failed after {attempts} attempts: {message}")]
    Judge { attempts: usize, message: String },

    #[error("empty {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
