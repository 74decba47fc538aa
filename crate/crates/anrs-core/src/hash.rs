//! Stable 64-bit FNV-1a hashing for cache keys, vocabulary fingerprints and
//! the validation split. Stdlib hashers are not guaranteed stable across
//! builds; these are.

pub const FNV_OFFSET: u64 = 0xcbf29ce484222325;
pub const FNV_PRIME: u64 = 0x100000001b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_with(FNV_OFFSET, bytes)
}

pub fn fnv1a64_with(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Fingerprint a float slice via its exact bit patterns.
pub fn fnv1a64_f64(seed: u64, values: &[f64]) -> u64 {
    let mut h = seed;
    for v in values {
        h = fnv1a64_with(h, &v.to_bits().to_le_bytes());
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vectors() {
        // Standard FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn float_hash_distinguishes_sign() {
        assert_ne!(fnv1a64_f64(0, &[0.0]), fnv1a64_f64(0, &[-0.0]));
    }
}
