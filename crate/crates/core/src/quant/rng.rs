//! Counter-addressed random streams.
//!
//! Every stochastic-rounding draw is keyed by `(seed, coordinates)`, so a
//! message quantized on any worker, in any order, sees the same random bits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seed plus a position in coordinate space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, stream: 0 }
    }

    /// Derives the stream for a coordinate tuple. Nested calls compose.
    pub fn at(self, coords: &[u64]) -> Self {
        let stream = coords.iter().fold(self.stream, |acc, &c| {
            mix(acc.rotate_left(17) ^ mix(c.wrapping_add(0x9e37_79b9_7f4a_7c15)))
        });
        RngStream {
            seed: self.seed,
            stream,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}
