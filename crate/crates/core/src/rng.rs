//! Deterministic seed derivation for replicated experiments.
//!
//! Replicate `r` of an experiment draws from a generator seeded with
//! `mix_seed(master, r)`, so schedules and thread counts cannot change any
//! stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer: a fixed avalanche permutation of the state word.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a master seed and a stream index.
pub fn mix_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ stream.wrapping_add(1).wrapping_mul(GOLDEN))
}

/// Generator for one replicate of an experiment.
pub fn replicate_rng(master: u64, replicate: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(master, replicate))
}
