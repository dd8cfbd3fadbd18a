use rand::Rng;

use crate::rng;
use crate::tensor::Tensor;

/// Uniform(-1, 1) tensor from a fixed seed.
pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "test");
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `||a - b|| / max(||a||, ||b||)`, with a floor for all-zero pairs.
pub fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.sub(b).unwrap().sum_sq().sqrt();
    let scale = a.sum_sq().sqrt().max(b.sum_sq().sqrt()).max(1e-12);
    diff / scale
}
