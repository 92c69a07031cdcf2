//! Seeded generators.
//!
//! Every stochastic operation takes an explicit seed. Independent work items
//! (verification trials, Monte Carlo batches) get their own ChaCha stream
//! derived from `(seed, index)`, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StdRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> StdRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for work item `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> StdRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
