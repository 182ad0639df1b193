use thiserror::Error;

use crate::tensor::TensorError;

/// Errors raised while assembling or running the video transformer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{what}: {axis} extent {extent} is not divisible by {divisor}")]
    Indivisible {
        what: &'static str,
        axis: &'static str,
        extent: usize,
        divisor: usize,
    },
    #[error("patch merging needs even height and width, got {height}x{width}")]
    OddExtent { height: usize, width: usize },
    #[error("{what}: expected shape {expected:?}, found {found:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("channel width {channels} is not divisible by {heads} heads")]
    HeadsIndivisible { channels: usize, heads: usize },
    #[error("expected {expected} window blocks, got {got}")]
    WindowCount { expected: usize, got: usize },
    #[error("missing parameter {path:?}")]
    MissingParameter { path: String },
    #[error("parameter {path:?}: expected shape {expected:?}, found {found:?}")]
    ParameterShape {
        path: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

pub type ModelResult<T> = Result<T, ModelError>;
