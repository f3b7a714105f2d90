//! Seeded randomness. All random draws in the crate flow from ChaCha
//! streams derived here; there is no global RNG state.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Counter-based generator seeded from a single `u64`.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent substream `k` of the generator for `seed`.
///
/// Streams with the same seed but different `k` never overlap.
pub fn substream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// `n x p` matrix of i.i.d. standard normal draws, filled row-major.
pub fn standard_normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    let values: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    Array2::from_shape_vec((n, p), values).expect("shape matches buffer length")
}

/// Fisher-Yates shuffle of `0..n` driven by `rng`.
pub fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
