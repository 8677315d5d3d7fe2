use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown token {found:?} at {line}:{column}")]
    UnknownToken {
        line: usize,
        column: usize,
        found: char,
    },

    #[error("line {line}: more than one weight annotation")]
    DuplicateDirective { line: usize },

    #[error("line {line}: formula weights must be strictly positive")]
    NonPositiveWeight { line: usize },

    #[error("knowledge base contains no formulas")]
    EmptyKnowledge,

    #[error("mutual exclusion lists class {0} more than once")]
    DuplicateClass(String),

    #[error("mutual exclusion needs at least 2 classes, got {0}")]
    Arity(usize),

    #[error("unbound predicate(s): {}", .0.join(", "))]
    UnboundPredicate(Vec<String>),

    #[error("no truth value assigned to predicate {0}")]
    MissingAssignment(String),

    #[error("bad main class selection: {0}")]
    BadMainClasses(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty set")]
    EmptySet,

    #[error("bad architecture: {0}")]
    BadArchitecture(String),

    #[error("forward trace does not belong to this model")]
    TraceMismatch,

    #[error("percentage out of [0, 100]: {0}")]
    BadPercent(f64),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("no main classes configured")]
    NoMainClasses,

    #[error("invalid class partition: {0}")]
    InvalidPartition(String),

    #[error("sample {0} does not have exactly one positive main class")]
    NotSingleLabel(usize),

    #[error("clean and adversarial datasets are not row-aligned: {0}")]
    Misaligned(String),

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
