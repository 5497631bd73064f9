//! Spatiotemporal knowledge distillation for low-resolution aerial-video
//! saliency estimation.

pub mod autodiff;
pub mod bench;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod formats;
pub mod kernels;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision aliases used by the training pipeline and CLI.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type WeightStore32 = weights::WeightStore<f32>;
pub type WeightStore64 = weights::WeightStore<f64>;
