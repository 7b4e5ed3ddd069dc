use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure categories, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("edge {edge} references missing node {node}")]
    Referential { edge: String, node: String },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error("edge {edge} is missing attribute {attribute}")]
    AttributeMissing {
        edge: String,
        attribute: &'static str,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid value: {0}")]
    Validation(String),
    #[error("invalid histogram range [{lo}, {hi})")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("patch contains no valid raster cells")]
    EmptyPatch,
    #[error("normalizer needs at least one training vector")]
    EmptyTrainingSet,
    #[error("forward cache does not belong to the current model parameters")]
    StaleCache,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("unknown highway label {0:?}")]
    UnknownLabel(String),
    #[error("edge {edge} has parent_id {parent} that is not an ORN edge")]
    OrphanParent { edge: String, parent: String },
    #[error("majority vote group {0} is empty")]
    EmptyGroup(String),
    #[error("empty input")]
    EmptyInput,
    #[error("no labelled training nodes")]
    NoLabeledNodes,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::NonFinite(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}
