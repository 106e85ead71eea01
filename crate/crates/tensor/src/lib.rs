//! Dense tensors, 3-D convolution operators and a reverse-mode tape.

pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod norm;
pub mod tensor;

pub use conv::{conv3d, transposed_conv3d, ConvParams, PaddingMode};
pub use error::{Result, TensorError};
pub use gradcheck::{check_gradients, GradCheck};
pub use graph::{sigmoid_scalar, Activation, CustomOp, Gradients, Graph, ReduceKind, Var};
pub use norm::instance_norm;
pub use tensor::{DType, Scalar, Tensor};
