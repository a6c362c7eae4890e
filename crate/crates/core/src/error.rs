use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the normalization floor")]
    ZeroVector { norm: f64 },

    #[error("item `{id}` produced no features")]
    EmptyText { id: String },

    #[error("invalid text item: {0}")]
    InvalidItem(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("embedding matrix has no forward cache")]
    StaleCache,

    #[error("records disagree on hard-negative count: {first} vs {other}")]
    InconsistentK { first: usize, other: usize },

    #[error("label {value} outside [0, 1]")]
    LabelRange { value: f64 },

    #[error("row {row} has no positive column")]
    NoPositive { row: usize },

    #[error("row {row} has zero label mass")]
    AllZeroRow { row: usize },

    #[error("loss requires at least one hard negative per query")]
    NeedsHardNegatives,

    #[error("no row contains two candidates with distinct labels")]
    NoOrderedPairs,

    #[error("bad score distribution: {0}")]
    BadDistribution(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("line {line} carries both `relevance` and `score_probs`")]
    MixedSchema { line: usize },

    #[error("label noise requires binary labels, found {value}")]
    NeedsBinary { value: f64 },

    #[error("label noise requires exactly one hard negative, found {found}")]
    NeedsOneNegative { found: usize },

    #[error("record `{query_id}` has {found} hard negatives, {required} required")]
    NotEnoughNegatives {
        query_id: String,
        found: usize,
        required: usize,
    },

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("cutoff {cutoff} leaves no records")]
    EmptyResult { cutoff: f64 },

    #[error("non-finite gradient in parameter group `{group}`")]
    NonFiniteGrad { group: &'static str },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure stems from user input or configuration rather
    /// than a defect in the program.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteGrad { .. } | Error::StaleCache | Error::ShapeMismatch { .. }
        )
    }
}
