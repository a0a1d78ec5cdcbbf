//! Seeded random streams. Each consumer draws from its own ChaCha stream so
//! that adding draws in one place never shifts another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STREAM_GENERATOR_INIT: u64 = 1;
pub const STREAM_LATENT_NOISE: u64 = 2;
pub const STREAM_PREFIX_INIT: u64 = 3;
pub const STREAM_BASELINE_INIT: u64 = 4;
pub const STREAM_OFFLINE_SHUFFLE: u64 = 5;
pub const STREAM_REGRESSION_TRUTH: u64 = 6;
/// Domain `k` of a synthetic dataset draws from `STREAM_DOMAIN_BASE + k`.
pub const STREAM_DOMAIN_BASE: u64 = 1 << 16;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn fan_in_uniform(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}
