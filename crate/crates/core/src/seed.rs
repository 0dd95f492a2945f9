//! Derivation of independent RNG streams from one experiment seed.
//!
//! Every consumer of randomness (init, shuffling, augmentation, trial k of a
//! randomized check) seeds its own generator from `mix(&[seed, tag, …])`, so
//! adding or reordering consumers never shifts anyone else's stream.

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix64(acc ^ p))
}
