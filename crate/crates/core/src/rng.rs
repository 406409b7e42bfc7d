//! Seed derivation. Every stochastic step draws from a ChaCha stream keyed by
//! the experiment seed plus a path of integers naming the step, so results do
//! not depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream identifiers.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// FNV-1a, used to turn video ids into stream identifiers.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

// Stream tags. Kept as named constants so two call sites never collide.
pub(crate) const TAG_SYNTH: u64 = 1;
pub(crate) const TAG_TRAIN: u64 = 2;
pub(crate) const TAG_MC: u64 = 3;
pub(crate) const TAG_POWER_BALD: u64 = 4;
pub(crate) const TAG_INIT: u64 = 5;
pub(crate) const TAG_VIDEO_SELECT: u64 = 6;
pub(crate) const TAG_CLIP_SELECT: u64 = 7;
pub(crate) const TAG_ORACLE: u64 = 8;
