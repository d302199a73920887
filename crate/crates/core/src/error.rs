use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    /// A JSONL input line could not be decoded or violates a record invariant.
    #[error("line {line}: {message}")]
    InputFormat { line: usize, message: String },

    #[error("duplicate title in corpus: {0:?}")]
    DuplicateTitle(String),

    #[error("duplicate doc_id in corpus: {0:?}")]
    DuplicateDocId(String),

    #[error("entity {entity:?} in question {question_id:?} does not resolve to a corpus title")]
    UnknownEntity { question_id: String, entity: String },

    #[error("unknown doc_id {0:?}")]
    UnknownDocId(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Backend failure. `retryable` marks transient failures (timeouts, 5xx, 429).
    #[error("backend error: {message}")]
    Backend { message: String, retryable: bool },

    #[error("no scripted rule matches the prompt")]
    NoScriptedRule,

    #[error("parse error: {message}")]
    Parse { message: String, raw: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(message: impl Into<String>, raw: impl Into<String>) -> Self {
        Error::Parse {
            message: message.into(),
            raw: raw.into(),
        }
    }

    pub fn backend(message: impl Into<String>, retryable: bool) -> Self {
        Error::Backend {
            message: message.into(),
            retryable,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Backend { retryable: true, .. })
    }
}
