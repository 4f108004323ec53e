//! Seeded randomness.
//!
//! Every random draw in the crate comes from [`ChaCha8Rng`], seeded through
//! [`substream`] so that a single root seed fans out into independent, named
//! streams (`"simulation"`, `"folds"`, `"backtest"`, ...). ChaCha8 output is
//! platform independent, which makes fold plans and simulated panels
//! bit-reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of the `index`-th member of the stream `label` under `root`.
pub fn substream(root: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label bytes
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix64(mix64(root ^ h).wrapping_add(index))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
