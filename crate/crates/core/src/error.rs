use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incomplete scene: {0}")]
    IncompleteScene(String),

    #[error("inconsistent rasters: {0}")]
    InconsistentRasters(String),

    #[error("manifest invalid: {0}")]
    ManifestInvalid(String),

    #[error("mask invalid: {0}")]
    MaskInvalid(String),

    #[error("placement failure: {0}")]
    PlacementFailure(String),

    #[error("scene {0} has no change mask")]
    MissingMask(String),

    #[error("scene {scene} ({height}x{width}) is smaller than the {size}x{size} window")]
    SceneTooSmall {
        scene: String,
        height: usize,
        width: usize,
        size: usize,
    },

    #[error("unknown band: {0}")]
    UnknownBand(String),

    #[error("degenerate class balance: {0}")]
    DegenerateClassBalance(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by an input file that does not exist.
    pub fn is_missing_input(&self) -> bool {
        match self {
            Error::IncompleteScene(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}
