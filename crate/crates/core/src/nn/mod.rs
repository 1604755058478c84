//! Minimal differentiable layer library: exactly the operations the surrogate
//! needs, with hand-written reverse passes and an ADAM optimizer.
//!
//! Images are channel-major `[C, H, W]`; all arithmetic is `f64`.

mod activation;
mod adam;
mod conv;
mod dense;
mod gradcheck;
mod linalg;
mod pool;
mod tensor;

pub use activation::{
    relu, relu_backward, relu_backward_in_place, relu_in_place, relu_scalar, sigmoid, sigmoid_backward, sigmoid_scalar,
};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv2d, conv2d_backward, ConvGeometry, ConvGrads, Padding};
pub use dense::{dense, dense_backward, dense_backward_raw, dense_raw, gemv, Weight};
pub use gradcheck::{grad_check, CheckOptions, GradReport, TensorCheck};
pub use linalg::{gemm, Op};
pub use pool::{maxpool3, maxpool3_backward, maxpool3_backward_raw, maxpool3_raw, pooled, Pooled, POOL};
pub use tensor::Tensor;
