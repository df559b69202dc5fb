//! Invertible image rescaling with a learned orthogonal transform, additive
//! coupling blocks, a stored detail prior, and a one-step denoising refiner.
//!
//! The crate is generic over the working scalar (f32 or f64) through the
//! [`scalar::Scalar`] trait; [`Tensor32`] and [`Tensor64`] are the concrete
//! aliases most callers want.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod imaging;
pub mod invnet;
pub mod nn;
pub mod pipeline;
pub mod numerics;
pub mod refiner;
pub mod scalar;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
pub use numerics::tensor::Tensor;
pub use scalar::Scalar;

/// Dense f32 tensor, the working type of the full pipeline.
pub type Tensor32 = Tensor<f32>;
/// Dense f64 tensor, used by numeric verification paths.
pub type Tensor64 = Tensor<f64>;
