//! Shared setup for the criterion benchmarks: deterministic inputs and a
//! freshly initialized (untrained) model, so benches measure kernel cost,
//! not training time.

use rand::Rng;

use svdatk_core::data::generate_range;
use svdatk_core::models::{ArchId, LayerGraph};
use svdatk_core::rng::{purpose, stream};
use svdatk_core::tensor::Tensor;

/// Uniform random buffer in [-1, 1), deterministic per salt.
pub fn random_vec(salt: u64, n: usize) -> Vec<f32> {
    let mut rng = stream(salt, purpose::TEST, 0xBE);
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Double-precision variant for the similarity benchmarks.
pub fn random_vec_f64(salt: u64, n: usize) -> Vec<f64> {
    let mut rng = stream(salt, purpose::TEST, 0xBF);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// A small image batch straight from the dataset generator.
pub fn image_batch(n: usize) -> (Tensor<f32>, Vec<usize>) {
    generate_range(0, 0, n).to_batch::<f32>()
}

/// Freshly initialized first architecture; weights are random but the
/// compute cost matches a trained model exactly.
pub fn fresh_model() -> LayerGraph<f32> {
    LayerGraph::<f32>::build(ArchId::ConvnetA, 10, 1)
}
