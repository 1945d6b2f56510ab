//! Seeded fixtures shared by the benchmarks.

use deephetero::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform values in [-1, 1) of the given shape.
pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("non-empty shape")
}

/// Class labels 0, 1, .., classes-1 repeated over a batch.
pub fn labels(batch: usize, classes: usize) -> Vec<usize> {
    (0..batch).map(|i| i % classes).collect()
}
