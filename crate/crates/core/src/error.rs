use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("format version mismatch: {0}")]
    FormatVersionMismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("division by zero at pixel ({u}, {v})")]
    DivisionByZero { u: usize, v: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("regions {0} and {1} overlap")]
    OverlappingRegions(String, String),
    #[error("image {height}x{width} too small for a {needed}x{needed} descriptor")]
    ImageTooSmall { height: usize, width: usize, needed: usize },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("training pairs mix regions {0} and {1}")]
    MixedRegions(String, String),
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("objective diverged at iteration {iteration}")]
    DivergedObjective { iteration: usize },
    #[error("score list is empty")]
    EmptyScores,
    #[error("zero vector")]
    ZeroVector,
    #[error("feature vector is all zeros")]
    ZeroFeatureVector,
    #[error("no embedding for image id {0}")]
    MissingEmbedding(String),
    #[error("landmark count mismatch: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("no genuine pairs")]
    NoGenuinePairs,
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for errors caused by non-finite values during optimization.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::DivergedLoss { .. } | Error::DivergedObjective { .. })
    }
}
