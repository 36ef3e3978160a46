//! Deterministic random streams.
//!
//! Every sampled position gets its own ChaCha stream keyed by
//! `(seed ^ sentence id, position)`, so results do not depend on the order in
//! which sentences are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream for one token position of one sentence.
pub fn position_rng(seed: u64, sentence_id: u64, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ sentence_id);
    rng.set_stream(position as u64);
    rng
}

/// Seed for the `replication`-th independent sanitization of a corpus.
pub fn replication_seed(seed: u64, replication: usize) -> u64 {
    if replication == 0 {
        return seed;
    }
    splitmix64(seed.wrapping_add((replication as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Seed for an independent sub-task (e.g. a corpus split) derived from `seed`.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
