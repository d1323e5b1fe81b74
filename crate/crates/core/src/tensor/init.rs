//! Seedable parameter initialisation.

use rand::Rng;

use super::Tensor;
use crate::scalar::Scalar;

/// He-style uniform init, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn fan_in_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches data length")
}
