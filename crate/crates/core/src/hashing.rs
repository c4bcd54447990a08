//! Stable, platform-independent hashing used to derive per-item randomness.
//!
//! Keys are hashed with 64-bit FNV-1a, then combined with the seed through
//! the SplitMix64 finalizer. Both are fixed here so that split membership and
//! generated cohorts never depend on input order or on the std hasher.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Hash of `(seed, key)`.
pub fn keyed_hash(seed: u64, key: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(key.as_bytes())))
}

/// Hash of `(seed, index)`.
pub fn indexed_hash(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Maps a hash to a uniform value in `[0, 1)`.
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn keyed_hash_depends_on_seed_and_key() {
        assert_ne!(keyed_hash(1, "enc-1"), keyed_hash(2, "enc-1"));
        assert_ne!(keyed_hash(1, "enc-1"), keyed_hash(1, "enc-2"));
        assert_eq!(keyed_hash(7, "x"), keyed_hash(7, "x"));
        let u = unit_interval(u64::MAX);
        assert!((0.0..1.0).contains(&u));
    }
}
