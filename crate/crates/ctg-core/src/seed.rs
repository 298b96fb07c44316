//! Seed derivation for independent random streams.
//!
//! Every randomized operation takes an explicit u64 seed; substreams
//! (per repetition, per epoch, per component, ...) are derived by mixing
//! rather than by sharing a sequential RNG, so results stay independent of
//! iteration and thread order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed, a purpose label and salt values.
pub fn derive(base: u64, label: &str, salts: &[u64]) -> u64 {
    let mut h = mix(base);
    for byte in label.bytes() {
        h = mix(h ^ u64::from(byte));
    }
    for &s in salts {
        h = mix(h ^ s);
    }
    h
}

/// Seeded RNG for a derived stream.
pub fn rng(base: u64, label: &str, salts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, label, salts))
}
