//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recognet_core::data::{generate_phantom, PhantomSpec, PreprocessConfig};
use recognet_core::training::Case;
use recognet_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

/// A preprocessed 12-slice 64x64 phantom.
pub fn phantom_case(seed: u64) -> Case {
    let (v, m) = generate_phantom(&PhantomSpec::default().with_seed(seed)).expect("valid default spec");
    Case::prepare("bench", &v, Some(&m), &PreprocessConfig::with_size(64)).expect("phantom preprocesses")
}
