//! Seeded randomness.
//!
//! All stochastic steps (initialization, shuffling, dropout masks, synthetic
//! data) draw from ChaCha8, a counter-based stream cipher generator, seeded
//! from a `u64` with `SeedableRng::seed_from_u64`. Distinct consumers use
//! distinct stream ids so that adding a draw in one place does not shift
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for an independent stream derived from `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
