//! Seed derivation.
//!
//! Every stochastic component draws from a [`ChaCha8Rng`] whose seed is derived
//! from one master `u64` by SplitMix64 mixing along a path of stream labels.
//! Two different label paths yield statistically independent streams, so
//! adding a new consumer never perturbs existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream(splitmix64(seed))
    }

    /// Child stream identified by `label`.
    pub fn split(self, label: u64) -> Self {
        SeedStream(splitmix64(self.0 ^ splitmix64(label.wrapping_add(GOLDEN))))
    }

    /// Child stream identified by a short string label.
    pub fn named(self, label: &str) -> Self {
        // FNV-1a; stable across platforms.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.split(h)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
