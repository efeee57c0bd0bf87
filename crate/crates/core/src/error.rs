use std::path::PathBuf;

/// Errors produced anywhere in the labeling pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing band `{band}` in {dir}")]
    MissingBand { band: &'static str, dir: PathBuf },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("value {value} outside [0, 1] in band `{band}`")]
    ValueOutOfRange { band: &'static str, value: f64 },

    #[error("malformed sidecar {path}: {reason}")]
    MalformedSidecar { path: PathBuf, reason: String },

    #[error("raster decode error in {path}: {reason}")]
    Raster { path: PathBuf, reason: String },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("constant dimension `{0}` cannot be rescaled")]
    ConstantDimension(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("conditioning point outside support")]
    OutsideSupport,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("field `{0}` was part of the model's training data")]
    FieldLeak(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("spec infeasible: {0}")]
    SpecInfeasible(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
