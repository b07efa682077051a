//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a 64-bit seed mixed from a master seed and a few tags, so runs
//! are reproducible and independent streams never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lattice::Site;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(master), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn site_seed(master: u64, tag: u64, site: &Site) -> u64 {
    let h = site.coords().iter().fold(mix64(tag ^ site.dim() as u64), |acc, &c| mix64(acc ^ c as u64));
    derive_seed(master, &[h])
}

pub fn stream(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for item `index` under `master`.
pub fn indexed_stream(master: u64, tag: u64, index: u64) -> SimRng {
    stream(derive_seed(master, &[tag, index]))
}

/// Tags that keep the different per-site streams apart.
pub(crate) mod tags {
    pub const INSTRUCTIONS: u64 = 0x7461_7065;
    pub const DIRECTIONS: u64 = 0x6469_7273;
    pub const POISSON: u64 = 0x706f_6973;
    pub const WALK: u64 = 0x7761_6c6b;
    pub const ORDER: u64 = 0x6f72_6472;
}
