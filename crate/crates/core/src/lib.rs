//! Hybrid spiking/non-spiking network engine.

pub mod accumulator;
pub mod autodiff;
pub mod cost;
pub mod error;
pub mod events;
pub mod hw;
pub mod kernels;
pub mod model;
pub mod scalar;
pub mod spiking;
pub mod tensor;
pub mod trainer;
pub mod weights;

pub use accumulator::{accumulate_backward, accumulate_forward, AccumulatedTensor, AccumulatorConfig};
pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use spiking::{CubaLifParams, CubaLifState, SpikeMode, SpikePoolMode, SpikeTensor};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type SpikeTensor64 = SpikeTensor<f64>;
pub type SpikeTensor32 = SpikeTensor<f32>;
