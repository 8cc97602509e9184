//! Counter-based random streams.
//!
//! Every draw made for tree node `u` under seed `s` comes from the ChaCha
//! stream keyed by `s` with stream id `u`, so simulation output depends only
//! on `(seed, node index)` and never on traversal or thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser, used to derive independent seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replication `r` of an experiment seeded with `seed`.
pub fn replication_seed(seed: u64, r: u64) -> u64 {
    mix64(mix64(seed) ^ mix64(r.wrapping_add(0xA5A5_5A5A)))
}

/// Factory for per-node random streams.
#[derive(Clone, Debug)]
pub struct StreamFactory {
    base: ChaCha8Rng,
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        Self { base: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Fresh stream for `id`, positioned at its first word.
    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(id);
        rng.set_word_pos(0);
        rng
    }
}
