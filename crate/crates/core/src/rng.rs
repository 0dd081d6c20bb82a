//! Seed derivation for independent random sub-streams.
//!
//! Every random quantity in a replication comes from its own ChaCha8 stream.
//! The stream seed is a SplitMix64 hash of `(replication seed, purpose tag, index)`,
//! so the draws a policy sees never depend on thread scheduling or on the
//! order in which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a sub-stream is used for. The discriminant participates in the hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Per-arm observation noise; index is the arm.
    Noise = 1,
    /// Realized environment shifts.
    Shift = 2,
    /// Realized environment lengths.
    ChangePoint = 3,
    /// Policy-internal randomness (shuffles, tie-breaks during allocation).
    Policy = 4,
    /// Tie-breaks inside recommendations; index is the sample count.
    Recommend = 5,
    /// Diagnostics that draw their own noise.
    Diagnostic = 6,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of two words.
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.rotate_left(17) ^ GOLDEN)
}

/// Seed of replication `rep_index` under `base_seed`. Independent of the policy.
pub fn replication_seed(base_seed: u64, rep_index: u64) -> u64 {
    mix(base_seed, rep_index)
}

/// Seed of the `(purpose, index)` sub-stream of a replication.
pub fn substream_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    mix(mix(seed, purpose as u64), index)
}

pub fn substream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, purpose, index))
}
