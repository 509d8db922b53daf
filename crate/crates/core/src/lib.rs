//! Evaluation of implicit generative models along two separate axes: how
//! well a sample can be reconstructed from latent space, and how likely that
//! reconstruction is to be generated when sampling the latent prior.

pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod histogram;
pub mod inversion;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod report;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{GeneratorSpec, NoiseDistribution, NoiseKind};
pub use tensor::Tensor;
