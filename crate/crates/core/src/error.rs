use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point depth {0} is not in front of the camera")]
    NonPositiveDepth(f64),
    #[error("transformed point lies behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("reprojection needs square pixels and zero skew: {0}")]
    UnsupportedIntrinsics(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("validity mask selects no pixel")]
    EmptyMask,
    #[error("camera translation {0} m is too small to triangulate")]
    DegenerateMotion(f64),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{poses} poses for {images} images in {path}")]
    PoseCountMismatch {
        path: PathBuf,
        poses: usize,
        images: usize,
    },
    #[error("corrupt depth map {0}: {1}")]
    CorruptDepth(PathBuf, String),
    #[error("degenerate scene: {0}")]
    DegenerateSpec(String),
    #[error("non-finite loss at iteration {iter}; batch dumped to {dump}")]
    NonFiniteLoss { iter: usize, dump: PathBuf },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn shape(detail: impl Into<String>) -> Self {
        Error::ShapeMismatch(detail.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
