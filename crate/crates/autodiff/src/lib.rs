//! Reverse-mode automatic differentiation over dense `f32`/`f64` tensors.
//!
//! Operations are recorded on a [`Graph`] tape as they execute; values are
//! addressed through copyable [`Var`] handles. All kernels are generic over
//! [`Scalar`], so the same model code runs in 32-bit for training and in
//! 64-bit for finite-difference verification.

mod adam;
mod error;
mod graph;
pub mod gradcheck;
pub mod init;
mod ops;
mod scalar;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use ops::ResampleMode;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
