//! Core data model and corpus pipeline for span-level extraction of clinical
//! factors from psychiatric notes.
//!
//! The crate covers everything that does not need a neural network: the label
//! schema, note generation clients, parsing of inline-annotated notes into
//! sentence records, dataset diversity statistics, training-set construction
//! and the evaluation protocol.

pub mod analytics;
pub mod builder;
pub mod corpus;
pub mod evaluator;
pub mod genclient;
pub mod parser;
pub mod schema;
pub mod text;

use std::path::{Path, PathBuf};

pub use corpus::{AnnotatedSentence, CorpusHeader, Partition, SpanAnnotation};
pub use schema::{Factor, FactorDomain, Label, Polarity, Schema, SchemaVersion};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{}: {source}", path.display())]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{}:{line}: {source}", path.display())]
    ParseAt {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },
}

impl Error {
    pub fn io_at(path: &Path, source: std::io::Error) -> Error {
        Error::IoAt { path: path.to_path_buf(), source }
    }

    pub fn parse_at(path: &Path, line: usize, source: serde_json::Error) -> Error {
        Error::ParseAt { path: path.to_path_buf(), line, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
