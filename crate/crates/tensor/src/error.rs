use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("axis {axis} is invalid for a rank-{rank} tensor")]
    Axis { axis: usize, rank: usize },

    #[error("instance norm needs a spatial volume of at least 2, got {0}")]
    DegenerateNorm(usize),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Shape(msg.into()))
}
