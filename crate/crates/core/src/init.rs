//! Xavier (Glorot) uniform initialization.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Half-width `sqrt(6 / (fan_in + fan_out))` of the Xavier uniform range.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    num_traits::Float::sqrt(6.0 / (fan_in + fan_out) as f64)
}

/// Fills a tensor of `shape` with draws from `U(-a, a)`,
/// `a = sqrt(6 / (fan_in + fan_out))`, using the given generator.
pub fn xavier_uniform<T: Real>(shape: Shape, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let fan_in = fan_in.max(1);
    let fan_out = fan_out.max(1);
    let a = xavier_bound(fan_in, fan_out);
    let data: Vec<T> = (0..shape.numel())
        .map(|_| T::from_f64(rng.gen_range(-a..=a)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}

/// Seeded one-shot variant of [`xavier_uniform`].
pub fn xavier_init<T: Real>(shape: Shape, fan_in: usize, fan_out: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_uniform(shape, fan_in, fan_out, &mut rng)
}
