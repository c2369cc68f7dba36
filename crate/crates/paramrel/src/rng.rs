//! Deterministic RNG handling.
//!
//! Every stochastic routine takes an explicit `Rng` handle. Streams for
//! independent purposes (data generation, init, per-step noise) are derived
//! from one master seed via ChaCha stream splitting, so a single `seed`
//! config key pins an entire run.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha12Rng;

/// Master RNG for a run.
pub fn seeded(seed: u64) -> Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Independent stream derived from the same seed.
pub fn derive(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Vector of i.i.d. standard normal draws.
pub fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}
