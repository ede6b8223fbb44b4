//! Shared fixtures for the criterion benches.

use assoc_core::data::{gen_dfd_like, Pair};
use assoc_core::rng::SplitMix64;
use assoc_core::Tensor;

/// Uniform random tensor of the given shape.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )
    .expect("valid shape")
}

/// A batch of DFD-like training pairs.
pub fn dfd_batch(n: usize) -> Vec<Pair> {
    gen_dfd_like(1, n, 0, 7).expect("valid task").train
}
