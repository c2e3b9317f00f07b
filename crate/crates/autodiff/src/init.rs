//! Seeded parameter initializers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Deterministic generator used for every initializer.
pub type InitRng = ChaCha8Rng;

pub fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut InitRng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
}

/// He/Kaiming uniform for ReLU networks: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut InitRng) -> Tensor<T> {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}
