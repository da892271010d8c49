//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- color primitives ---
    #[error("cannot normalize a (near-)zero vector: |v| = {norm:.3e}")]
    ZeroVector { norm: f64 },
    #[error("illuminant has a negative component: ({0}, {1}, {2})")]
    NegativeComponent(f64, f64, f64),
    #[error("degenerate illuminant: channel {channel} = {value:.3e} <= 1e-6")]
    DegenerateIlluminant { channel: usize, value: f64 },
    #[error("green channel too small for chroma projection: g = {0:.3e}")]
    GreenUnderflow(f64),
    #[error("mask dimensions {mask_h}x{mask_w} do not match image {h}x{w}")]
    MaskShapeMismatch {
        mask_h: usize,
        mask_w: usize,
        h: usize,
        w: usize,
    },
    #[error("negative pixel value {value:.3e} at ({y}, {x}, {c})")]
    NegativePixel { y: usize, x: usize, c: usize, value: f64 },

    // --- candidate selection ---
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("k = {k} exceeds the {distinct} distinct input illuminants")]
    TooFewDistinctPoints { k: usize, distinct: usize },
    #[error("degenerate chroma extent on the {axis} axis: span = {span:.3e}")]
    DegenerateExtent { axis: &'static str, span: f64 },
    #[error("EM log-likelihood decreased by {drop:.3e} at iteration {iteration}")]
    EmDidNotConverge { iteration: usize, drop: f64 },
    #[error("degenerate mixture component: {0}")]
    DegenerateComponent(String),

    // --- data ingestion / preprocessing ---
    #[error("manifest parse error at {path}:{line}: {msg}")]
    ParseError { path: PathBuf, line: usize, msg: String },
    #[error("image file not found: {0}")]
    MissingImageFile(PathBuf),
    #[error("bad ground-truth illuminant at {path}:{line}: {msg}")]
    BadIlluminant { path: PathBuf, line: usize, msg: String },
    #[error("no usable pixel survives masking")]
    AllMasked,
    #[error("black level {black:.3} >= saturation level {saturation:.3}")]
    BlackLevelExceedsSaturation { black: f64, saturation: f64 },
    #[error("need at least {needed} distinct scenes for {folds} folds, found {found}")]
    TooFewScenes { needed: usize, found: usize, folds: usize },
    #[error("bad image payload {path}: {msg}")]
    BadImageFile { path: PathBuf, msg: String },

    // --- network ---
    #[error("bad weight file {path}: {msg}")]
    BadWeightFile { path: PathBuf, msg: String },
    #[error("non-finite activation in {layer}")]
    NonFiniteActivation { layer: &'static str },
    #[error("forward trace does not match network shape: {0}")]
    TraceMismatch(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("checkpoint candidate-set hash mismatch: checkpoint has {expected}, got {actual}")]
    HashMismatch { expected: String, actual: String },

    // --- posterior ---
    #[error("length mismatch: {what}: {left} vs {right}")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("non-finite logit at index {0}")]
    NonFiniteLogit(usize),

    // --- training ---
    #[error("batch mixes cameras {0} and {1} in multi-device mode")]
    MixedCameraBatch(String, String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("no candidate set provided for camera {0}")]
    MissingCandidateSet(String),

    // --- evaluation / baselines ---
    #[error("channel {0} has zero mean over unmasked pixels")]
    ZeroChannel(usize),
    #[error("non-positive statistic {name} = {value}; geometric mean undefined")]
    NonPositiveStatistic { name: &'static str, value: f64 },

    // --- io ---
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
