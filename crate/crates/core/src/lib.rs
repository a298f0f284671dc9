//! Cross-scale, cross-branch energy-exchange fusion for RGB-X
//! object-of-interest detection, with the tensor, training, and evaluation
//! machinery needed to run it end to end.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the 64-bit instantiation used for training and verification.

pub mod dualnet;
pub mod energy;
pub mod error;
pub mod exchange;
pub mod fusion;
pub mod gradcheck;
pub mod io;
mod kernels;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod traineval;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tape::Tape<f64>;
pub type Tape32 = tape::Tape<f32>;
pub type AttentionParams64 = energy::AttentionParams<Tensor64>;
pub type ExchangeParams64 = exchange::ExchangeParams<Tensor64>;
pub type RxfoodParams64 = fusion::RxfoodParams<Tensor64>;
pub type NetParams64 = dualnet::NetParams<Tensor64>;
