//! Dense row-major tensors with tape-free reverse-mode differentiation.
//!
//! Every operation returns a new [`Tensor`]; when recording is enabled and an
//! input requires a gradient, the output keeps a backward rule and its
//! parents. [`Tensor::backward`] walks that graph once and returns the
//! gradients of all leaves. All numerics are generic over [`Scalar`], so the
//! same model code runs in `f32` for training and `f64` for gradient checks.

pub mod nn;
mod ops;
pub mod optim;
mod scalar;
mod store;
mod tensor;

pub use ops::conv::Padding;
pub use scalar::Scalar;
pub use store::{Builder, Init, ParamStore};
pub use tensor::{is_grad_enabled, no_grad, Gradients, NoGradGuard, Tensor};
