//! Benchmark framework for spiking neural network learning rules of varying
//! locality: backpropagation through time, eligibility propagation (e-prop)
//! and layerwise local learning (DECOLLE), on feed-forward and explicitly
//! recurrent architectures.
//!
//! The crate also ships the measurement suite used to compare the rules:
//! centered kernel alignment (CKA) over layer representations, Fisher
//! information traces for parameter-importance profiling, and robustness
//! harnesses for FGSM-style perturbations and backdoor poisoning.
//!
//! All numeric code is generic over the scalar type through [`Scalar`]
//! (`f32` or `f64`); concrete aliases for the common instantiations live at
//! the crate root.

pub mod analysis;
pub mod attacks;
pub mod data;
pub mod error;
pub mod learn;
pub mod scalar;
pub mod snn;
pub mod tensor;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// Spike raster over `f64`, the default precision of the benchmark CLI.
pub type SpikeTensor64 = tensor::SpikeTensor<f64>;
/// Spike raster over `f32`.
pub type SpikeTensor32 = tensor::SpikeTensor<f32>;
/// Network over `f64`.
pub type Network64 = snn::Network<f64>;
/// Network over `f32`.
pub type Network32 = snn::Network<f32>;
/// Dataset over `f64`.
pub type Dataset64 = data::Dataset<f64>;
/// Dataset over `f32`.
pub type Dataset32 = data::Dataset<f32>;
