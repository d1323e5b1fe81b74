//! Building blocks for benchmarking adversarial attacks on visual
//! recommenders: a small autodiff engine, an image classifier used as
//! feature extractor, attacks and defenses, BPR recommenders and metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision variant used by the experiment runner.

pub mod attacks;
pub mod dataio;
pub mod error;
pub mod ife;
pub mod metrics;
pub mod optim;
pub mod recsys;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type Classifier = ife::Classifier<f64>;
pub type LinearClassifier = ife::LinearClassifier<f64>;
pub type LabeledImages = ife::LabeledImages<f64>;
pub type AttackedImage = attacks::AttackedImage<f64>;
pub type Optimizer = optim::Optimizer<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Classifier32 = ife::Classifier<f32>;
