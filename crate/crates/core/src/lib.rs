//! Training engine and benchmark harness for backpropagation and three
//! backpropagation-free learning rules (Forward-Forward, Cascaded-Forward,
//! Mono-Forward) on small MLP and CNN architectures.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient checks). The aliases below cover the common cases.

pub mod algo;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod nn;
pub mod numerics;
pub mod optim;
pub mod profiling;

pub use error::{Error, Result};
pub use numerics::{RngStream, Scalar, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Dataset32 = datasets::Dataset<f32>;
pub type Mlp32 = nn::Mlp<f32>;
pub type Cnn32 = nn::Cnn<f32>;
