//! Counter-based random streams.
//!
//! Every random draw in the crate is a pure function of a [`StreamKey`] and a
//! counter. Keys form a tree: a master seed is mixed into a root key, and
//! children are derived from `(parent, label, index)`. For a fixed parent the
//! derivation is injective in `(label, index)` (it composes bijections of
//! `u64`), so distinct labels never share a stream. Because no generator state
//! is shared between replicas, results do not depend on scheduling or on the
//! number of worker threads.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const INDEX_BITS: u32 = 48;

/// SplitMix64 finalizer; a bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Labels for the branches of the key tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum Label {
    Env = 1,
    Walk = 2,
    BurnIn = 3,
    Time = 4,
    Replica = 5,
    History = 6,
    Start = 7,
    WalkX = 8,
    WalkY = 9,
    Bootstrap = 10,
    Grid = 11,
    Aux = 12,
    Jitter = 13,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey(pub u64);

impl StreamKey {
    /// Root key for a user-facing master seed.
    pub fn from_seed(seed: u64) -> Self {
        StreamKey(mix64(seed ^ 0x5851_F42D_4C95_7F2D))
    }

    pub fn derive(self, label: Label, index: u64) -> StreamKey {
        debug_assert!(index < (1u64 << INDEX_BITS), "stream index too large");
        let tag = ((label as u64) << INDEX_BITS) | (index & ((1u64 << INDEX_BITS) - 1));
        StreamKey(mix64(self.0 ^ mix64(tag)))
    }

    /// The `counter`-th word of the SplitMix64 sequence keyed by `self`.
    #[inline]
    pub fn word(self, counter: u64) -> u64 {
        mix64(self.0.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(self, counter: u64) -> f64 {
        (self.word(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Sequential generator over this key's counter stream.
    pub fn rng(self) -> CounterRng {
        CounterRng { key: self, counter: 0 }
    }

    /// ChaCha generator seeded from this key, for bulk auxiliary randomness.
    pub fn chacha(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// [`RngCore`] adapter walking a key's counter stream.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: StreamKey,
    counter: u64,
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let w = self.key.word(self.counter);
        self.counter += 1;
        w
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Inverse-CDF draw from a cumulative table; falls back to the last index
/// when rounding leaves `u` above the final entry.
#[inline]
pub fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    for (i, &c) in cdf.iter().enumerate() {
        if u < c {
            return i;
        }
    }
    cdf.len() - 1
}
