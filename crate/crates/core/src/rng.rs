//! Counter-based pseudorandom values keyed by `(seed, edge)`.
//!
//! Every per-edge uniform is a stateless hash of the seed and the canonical edge,
//! so Harris-coupled configurations can be realised lazily without storing one
//! uniform per potential edge.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed-domain tag for the χ sprinkling stream.
pub const CHI_TAG: u64 = 0xC41A_5EED_0000_0001;
/// Seed-domain tag for the continuum Poisson sampler.
pub const CONTINUUM_TAG: u64 = 0xC0A7_1A0A_0000_0002;
/// Seed-domain tag for the conditional uniforms of the coupled sweep.
pub const SWEEP_TAG: u64 = 0x5EE9_0000_0000_0003;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of the pseudorandom stream used for `(seed, replica)`.
pub fn stream_key(seed: u64, replica: u64) -> u64 {
    mix64(seed ^ mix64(replica.wrapping_add(GOLDEN)))
}

/// A sequential generator for the `(key, domain)` stream.
pub fn stream_rng(key: u64, domain: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(key ^ domain))
}

#[inline]
fn absorb(h: u64, word: u64) -> u64 {
    mix64(h ^ word.wrapping_mul(GOLDEN).wrapping_add(h << 6))
}

#[inline]
fn to_unit(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform on `[0, 1)` for the unordered edge `{u, v}`, given as lattice coordinates.
///
/// Symmetric in the endpoint order and a pure function of its inputs.
pub fn edge_uniform(seed: u64, u: &[i64], v: &[i64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let (a, b) = if u <= v { (u, v) } else { (v, u) };
    let mut h = mix64(seed.wrapping_add(GOLDEN));
    for &x in a.iter().chain(b) {
        h = absorb(h, x as u64);
    }
    to_unit(mix64(h))
}

/// Fast path of [`edge_uniform`] for `d = 1`; returns the same value.
#[inline]
pub fn edge_uniform_1d(seed: u64, u: i64, v: i64) -> f64 {
    let (a, b) = if u <= v { (u, v) } else { (v, u) };
    let h = absorb(absorb(mix64(seed.wrapping_add(GOLDEN)), a as u64), b as u64);
    to_unit(mix64(h))
}
