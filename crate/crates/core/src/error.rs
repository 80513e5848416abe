use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

/// Errors raised while recording or differentiating a tape.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid operand for {op}: shape {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    ElementCount { shape: Vec<usize>, len: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("flow magnitude {magnitude:e} exceeds overflow guard {limit:e}")]
    Overflow { magnitude: f64, limit: f64 },
    #[error("singular affine map (|det| = {det:e})")]
    Singular { det: f64 },
    #[error("variable {id} does not belong to this tape")]
    UnknownVar { id: usize },
}

/// Errors from model construction and the loss functions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("invalid sequence: {0}")]
    Sequence(String),
    #[error("dimension mismatch: {0}")]
    Dims(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("observed frame 0 has no foreground pixels")]
    EmptySupport,
    #[error("index out of range: {0}")]
    OutOfRange(String),
}

/// Errors raised by the training loop.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite value in loss term `{term}` at epoch {epoch}: {detail}")]
    NonFinite {
        term: &'static str,
        epoch: usize,
        detail: String,
    },
    #[error("observer aborted training: {0}")]
    Observer(String),
}

/// Errors raised by the synthetic data generator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("scene must have at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame dimensions must be at least 2x2, got {height}x{width}")]
    BadDims { height: usize, width: usize },
    #[error("object {object} leaves the image at frame {frame}")]
    OutOfBounds { frame: usize, object: usize },
    #[error("objects {first} and {second} overlap at frame {frame}")]
    Overlap {
        frame: usize,
        first: usize,
        second: usize,
    },
    #[error("object {object}: {reason}")]
    BadObject { object: usize, reason: String },
}
