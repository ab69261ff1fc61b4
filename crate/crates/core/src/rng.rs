//! Reproducible per-replicate random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator identity recorded in run summaries.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.3), seed_from_u64(master), stream = replicate index";

pub type SimRng = ChaCha8Rng;

/// Independent stream for replicate `index` of master seed `seed`.
///
/// A pure function of `(seed, index)`, so results do not depend on how
/// replicates are scheduled across threads.
pub fn replicate_rng(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
