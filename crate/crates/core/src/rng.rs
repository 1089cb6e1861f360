//! Reproducible random streams.
//!
//! Every replication of a Monte Carlo experiment draws from its own ChaCha
//! stream selected by `(seed, index)`, so results do not depend on how the
//! replications are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream `index` of the generator family identified by `seed`.
pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A generator seeded directly from `seed`.
pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
