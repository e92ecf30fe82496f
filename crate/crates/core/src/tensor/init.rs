use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::real::Real;

/// He-normal initialisation: zero mean, variance `2 / fan_in`, where
/// `fan_in` is the product of every dimension but the last (`3 * 3 * c_in`
/// for a conv kernel).
///
/// Returns a flat `1 x 1 x n` tensor; `dims` describes its logical shape.
pub fn he_init<T: Real>(dims: &[usize], seed: u64) -> Tensor<T> {
    assert!(!dims.is_empty(), "he_init needs at least one dimension");
    let n: usize = dims.iter().product();
    let fan_in: usize = dims[..dims.len() - 1].iter().product::<usize>().max(1);
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect();
    Tensor::from_vec(1, 1, n, data).expect("length matches")
}
