//! Deterministic seed derivation.
//!
//! Every random stream in the crate is keyed by a master seed plus a path of
//! integer tags, so results never depend on scheduling or call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const TAG_U: u64 = 0x75;
pub(crate) const TAG_SPLIT: u64 = 0x5350;
pub(crate) const TAG_SYNTH: u64 = 0x5359;
pub(crate) const TAG_TRIAL: u64 = 0x5452;
pub(crate) const TAG_UNDERSAMPLE: u64 = 0x5553;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a tag path.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(master), |acc, &tag| {
        mix64(acc ^ mix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Map 64 random bits to a uniform value in (0, 1].
pub fn unit_interval(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Tie-breaking draw for object `index` under `seed`.
pub fn object_u(seed: u64, index: u64) -> f64 {
    unit_interval(derive(seed, &[TAG_U, index]))
}
