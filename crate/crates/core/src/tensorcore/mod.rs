//! Minimal differentiable tensor engine: dense N,C,H,W arrays, the operation
//! set the segmentation model needs, reverse-mode gradients and Adam.

mod adam;
pub mod gradcheck;
mod graph;
pub mod ops;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Graph, Var, CHANNEL_NORM_EPS, DIFFERENTIABLE_OPS};
pub use ops::Conv2dOptions;
pub use scalar::Scalar;
pub use tensor::Tensor;
