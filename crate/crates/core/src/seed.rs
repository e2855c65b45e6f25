//! Seed derivation for independent deterministic random streams.
//!
//! Every random draw in the workspace flows from a ChaCha8 generator
//! seeded through these helpers, so runs are bit-reproducible across
//! platforms. Stream separation uses the SplitMix64 finalizer, which
//! mixes all 64 bits of (base, stream) and never collides trivially.

/// One SplitMix64 round: full-avalanche mix of the input.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for substream `stream` of generator family `base`.
/// Asymmetric in (base, stream): swapping them gives unrelated seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base).wrapping_add(stream))
}

/// Two-index variant for (class, index)-style derivations.
pub fn derive_seed2(base: u64, a: u64, b: u64) -> u64 {
    derive_seed(derive_seed(base, a), b)
}
