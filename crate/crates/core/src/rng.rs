//! Seeded random number generation.
//!
//! All randomness comes from [`ChaCha8Rng`], a counter-based stream cipher
//! generator whose output is fixed for a given 64-bit seed on every platform.
//! Independent streams are split off a parent seed with [`derive`], which
//! mixes the parent seed and a stream index through SplitMix64. String keys
//! (dataset ids, algorithm names) are folded into seeds with 64-bit FNV-1a,
//! see [`derive_key`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for `seed`.
pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed number `stream` of `seed`.
pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

/// 64-bit FNV-1a hash of `bytes`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Child seed of `seed` keyed by a sequence of string components.
pub fn derive_key(seed: u64, parts: &[&str]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, p| derive(acc, fnv1a(p.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn same_seed_same_stream() {
        let (mut r1, mut r2) = (rng(7), rng(7));
        for _ in 0..8 {
            assert_eq!(r1.random::<u64>(), r2.random::<u64>());
        }
    }

    #[test]
    fn derived_streams_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_key(1, &["a", "b"]), derive_key(1, &["b", "a"]));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
