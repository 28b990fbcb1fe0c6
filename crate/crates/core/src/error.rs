use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("manifest error at row {row}: {message}")]
    Manifest { row: usize, message: String },

    #[error("parse error at row {row}, field `{field}`: {message}")]
    Parse {
        row: usize,
        field: String,
        message: String,
    },

    #[error("taxonomy error at row {row}: codeletion status set on a non-mutant IDH row")]
    Taxonomy { row: usize },

    #[error("failed to decode image {path:?}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("no tissue found in slide `{slide_id}`")]
    NoTissue { slide_id: String },

    #[error("dimension error in layer {layer}: {message}")]
    Dimension { layer: usize, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("batch-size error: {0}")]
    BatchSize(String),

    #[error("numeric error in {context}: non-finite value")]
    Numeric { context: String },

    #[error("partial likelihood undefined: batch contains no observed events")]
    UndefinedLikelihood,

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("statistic undefined: {0}")]
    UndefinedStatistic(String),

    #[error("roc error: {0}")]
    Roc(String),

    #[error("c-index undefined: no comparable pairs")]
    UndefinedCIndex,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("survival cutoff error: {0}")]
    Cutoff(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("incompatible model: {0}")]
    Compatibility(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("patch cache error: {0}")]
    PatchCache(String),

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Compatibility(_) | Error::BatchSize(_) => 2,
            Error::Numeric { .. }
            | Error::Training { .. }
            | Error::UndefinedLikelihood
            | Error::Dimension { .. }
            | Error::Shape(_) => 4,
            _ => 3,
        }
    }
}
