use thiserror::Error;

/// Errors produced anywhere in the stitching and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mask parse error at {field}, byte {position}: {reason}")]
    MaskParse {
        field: &'static str,
        position: usize,
        reason: String,
    },
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("invalid point match: {0}")]
    InvalidMatch(String),
    #[error("need at least 4 point matches, got {0}")]
    InsufficientMatches(usize),
    #[error("no registration candidate survived filtering")]
    NoRegistration,
    #[error("degenerate warp: {0}")]
    DegenerateWarp(String),
    #[error("ill-posed mesh system: {0}")]
    IllPosed(String),
    #[error("object mask is empty")]
    EmptyObject,
    #[error("degenerate bounding box {0:?}")]
    DegenerateBox([f64; 4]),
    #[error("pixels {0:?} and {1:?} are not 4-adjacent")]
    NotAdjacent((usize, usize), (usize, usize)),
    #[error("instance too large for exhaustive search: {size:.3e} labelings exceed the bound {bound:.0e}")]
    InstanceTooLarge { size: f64, bound: f64 },
    #[error("linear solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("no rectangle free of occluded and empty pixels exists")]
    NoCropRectangle,
    #[error("image of {got}px is too small for {scales} MS-SSIM scales (need {min}px); use fewer scales")]
    TooSmallForScales { scales: usize, min: usize, got: usize },
    #[error("template {template:?} is larger than the search image {image:?}")]
    TemplateTooLarge {
        template: (usize, usize),
        image: (usize, usize),
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
