//! Stateless hashing used for reproducible pseudo-random values.

/// 64-bit avalanche finalizer (the output stage of splitmix64).
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps the top 53 bits of `v` to `[0, 1)`.
pub fn u64_to_unit(v: u64) -> f64 {
    (v >> 11) as f64 / (1u64 << 53) as f64
}
