//! Counter-based randomness: draws are pure functions of a seed and a record
//! key, so results do not depend on processing order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes `seed` and a list of key parts into 64 well-mixed bits.
///
/// Parts are length-delimited, so `["ab", "c"]` and `["a", "bc"]` differ.
pub fn keyed_u64(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = mix64(seed) ^ FNV_OFFSET;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        h = mix64(h ^ part.len() as u64);
    }
    mix64(h)
}

/// Uniform draw in `[0, 1)` keyed by `seed` and `parts`.
pub fn keyed_unit(seed: u64, parts: &[&[u8]]) -> f64 {
    (keyed_u64(seed, parts) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A sequential generator for one independent stream, e.g. one simulated
/// parking space.
pub fn stream_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(keyed_u64(seed, parts))
}
