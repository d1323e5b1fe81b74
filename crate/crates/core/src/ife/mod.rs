//! Image feature extractor: a small CNN classifier whose pooled activations
//! feed the recommenders.

mod model;
mod train;

pub use model::{argmax, Architecture, Classifier, Forward, LinearClassifier, LogitModel, ModelMeta, Regime};
pub use train::{accuracy, train, train_adversarial, train_free, train_standard, LabeledImages, TrainConfig, TrainReport};
