//! Platform-independent 64-bit mixing used for fingerprints, refinement
//! hashes and seed derivation. Values are fixed by tests; do not change.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive combination of a word sequence.
pub fn mix_all(words: &[u64]) -> u64 {
    let mut acc = 0x5EED_u64;
    for &w in words {
        acc = mix(acc.rotate_left(5) ^ w);
    }
    acc
}

/// Seed for an independent stream keyed by a tuple of indices.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    let mut acc = mix(base);
    for &k in keys {
        acc = mix(acc ^ mix(k.wrapping_add(GOLDEN)));
    }
    acc
}
