use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("scene {scene_id}: {message}")]
    InvalidScene { scene_id: String, message: String },
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("sampling: {0}")]
    Sampling(String),
    #[error("prompt: {0}")]
    Prompt(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("probe: {0}")]
    Probe(String),
    #[error("correlation: {0}")]
    Correlation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
