//! Seed plumbing.
//!
//! Every stochastic component (parameter init, dropout masks, corpus slice
//! offsets) draws from its own named child stream derived from the single
//! run seed.  Turning one consumer on or off therefore never perturbs the
//! draws seen by another, which keeps runs reproducible under config
//! changes that shouldn't matter.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer; decorrelates structurally similar inputs.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive the seed of a named child stream from a root seed.
pub fn child_seed(root: u64, label: &str) -> u64 {
    // FNV-1a over the label, folded into the root.
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in label.as_bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x100000001b3);
    }
    mix(root ^ mix(h))
}

/// Fold an index (epoch, window, run number, ...) into a seed.
pub fn fold(seed: u64, n: u64) -> u64 {
    mix(seed ^ n.wrapping_mul(0x9e3779b97f4a7c15))
}

/// The one generator used throughout the crate.
pub fn rng_from(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
