//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("gate input out of range: a={a}, b={b} (must lie in [0, 1])")]
    InputOutOfRange { a: f64, b: f64 },

    #[error("gate subset is empty")]
    EmptySubset,

    #[error("unknown gate id {0} (valid ids are 0..=15)")]
    UnknownGateId(i64),

    #[error("gate id {0} appears more than once in subset")]
    DuplicateGateId(u8),

    #[error("unknown gate subset name `{0}` (expected full16, simple8 or a list of ids)")]
    UnknownSubsetName(String),

    #[error("concept space of width {0} is too small to form a pair (need at least 2)")]
    DegenerateConceptSpace(usize),

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("no concept activations supplied")]
    EmptyActivations,

    #[error("shape mismatch{}: expected {expected}, got {actual}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    ShapeMismatch {
        layer: Option<usize>,
        expected: String,
        actual: String,
    },

    #[error("stale layer cache: {0}")]
    StaleCache(String),

    #[error("invalid label {label} (class count {classes})")]
    InvalidLabel { label: usize, classes: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("concept index {index} out of range for assignment of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("too many concepts for exhaustive check: {0} (limit 20)")]
    TooManyConcepts(usize),

    #[error("unsupported truth-table arity {0} (expected 2 or 3)")]
    UnsupportedArity(usize),

    #[error("class `{0}` has no satisfying assignment")]
    UnsatisfiableClass(String),

    #[error("classes `{first}` and `{second}` overlap; both hold at assignment {witness:?}")]
    OverlappingClasses {
        first: String,
        second: String,
        witness: Vec<u8>,
    },

    #[error("parse error at row {row}, column {column}: {message}")]
    ParseError {
        row: usize,
        column: String,
        message: String,
    },

    #[error("non-binary concept value `{value}` at row {row}, column {column}")]
    NonBinaryConcept {
        row: usize,
        column: String,
        value: String,
    },

    #[error("unknown label `{label}` at row {row}")]
    UnknownLabel { row: usize, label: String },

    #[error("formula syntax error at offset {offset}: {message}")]
    FormulaSyntax { offset: usize, message: String },

    #[error("true and predicted class are the same ({0})")]
    SameClass(usize),

    #[error("dataset has no concept ground truths")]
    MissingConceptGroundTruth,

    #[error("checkpoint schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint is corrupt: {0}")]
    CorruptChecksum(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            layer: None,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
