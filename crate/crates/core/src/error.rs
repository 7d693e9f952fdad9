use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid affect item configuration: {0}")]
    Polarity(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("unknown feature id `{0}`")]
    UnknownFeature(String),

    #[error("feature `{feature}` belongs to {expected} but appears in a {found} file")]
    ModalityMismatch {
        feature: String,
        expected: String,
        found: String,
    },

    #[error("duplicate samples for feature `{feature}` on {date} across {modality} files")]
    DuplicateSample {
        feature: String,
        date: String,
        modality: String,
    },

    #[error("rating {value} for item `{item}` on {date} is outside [0, 100]")]
    RatingOutOfRange { item: String, date: String, value: f64 },

    #[error("invalid timeline: {0}")]
    Timeline(String),

    #[error("insufficient label data: {0}")]
    InsufficientLabels(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("row has {found} features, model expects {expected}")]
    SchemaMismatch { expected: usize, found: usize },

    #[error("invalid model configuration: {0}")]
    ModelConfig(String),

    #[error("invalid cohort configuration: {0}")]
    CohortConfig(String),

    #[error("missing input file {0}")]
    MissingInput(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path)
        } else {
            Error::Io { path, source }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
