//! Infrared small-target segmentation with ILNet.
//!
//! The crate bundles a small dense tensor engine with reverse-mode autograd
//! ([`tensor`]), the network itself ([`model`]), deep-supervised training
//! ([`training`]), pixel- and target-level evaluation ([`metrics`]) and
//! image/mask I/O with a synthetic data generator ([`dataio`]).
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below fix the
//! element type to `f32` for training/inference and `f64` for gradient checks.

pub mod dataio;
pub mod error;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Result, TensorError};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = tensor::Tape<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type ParamStore32 = tensor::ParamStore<f32>;
pub type ParamStore64 = tensor::ParamStore<f64>;
pub type Ilnet32 = model::Ilnet<f32>;
pub type Ilnet64 = model::Ilnet<f64>;
