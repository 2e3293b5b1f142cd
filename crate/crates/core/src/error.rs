use std::path::PathBuf;

use thiserror::Error;

use crate::sequence::SourceKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("tape state: {0}")]
    State(&'static str),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),

    #[error("missing {kind} embedding for utterance {id:?} at {}", path.display())]
    MissingEmbedding {
        id: String,
        kind: SourceKind,
        path: PathBuf,
    },

    #[error("class {class} has {available} training records, {requested} requested")]
    InsufficientClass {
        class: &'static str,
        available: usize,
        requested: usize,
    },

    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("length mismatch: header implies {expected} bytes, found {found}")]
    Length { expected: u64, found: u64 },

    #[error("{kind} container must have {expected} columns, found {found}")]
    EmbeddingDimension {
        kind: SourceKind,
        expected: usize,
        found: usize,
    },

    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
