use std::path::PathBuf;

use thiserror::Error;

use crate::rse::TokenSpan;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed {task} record: {reason}")]
    MalformedRecord { task: &'static str, reason: String },

    #[error("invalid instance {id}: {violations}")]
    InvalidInstance { id: String, violations: String },

    #[error("duplicate (span, relation) pair: {span} {relation}")]
    DuplicatePair { span: TokenSpan, relation: String },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("missing verbalizer entry for label {0:?}")]
    MissingVerbalization(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("overlapping spans {first} and {second} in one tag sequence")]
    OverlappingSpans { first: TokenSpan, second: TokenSpan },

    #[error("invalid tagging request: {0}")]
    TagScheme(String),

    #[error("input of {len} pieces exceeds max_len {max_len}")]
    InputTooLong { len: usize, max_len: usize },

    #[error("empty emission sequence")]
    EmptySequence,

    #[error("gold tag sequence uses a masked transition at position {position}")]
    InvalidGoldPath { position: usize },

    #[error("split layer {k} out of range for a {layers}-layer encoder")]
    SplitOutOfRange { k: usize, layers: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("schema hash mismatch: model {model}, schema {schema}")]
    SchemaMismatch { model: String, schema: String },

    #[error("prediction refers to unknown passage id {0:?}")]
    UnknownId(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

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
}
