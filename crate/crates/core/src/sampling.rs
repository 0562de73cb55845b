//! Seeded, platform-independent sampling.
//!
//! All randomness goes through ChaCha8 keyed by a 64-bit seed, with a
//! distinct stream per operation so two operations sharing a seed do not
//! draw correlated selections. Bounded draws use rejection on the top of
//! a 64-bit word, so the selection depends only on the generator output.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream identifiers. Changing these changes every persisted split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    CapPerLocation = 1,
    Balance = 2,
    LocationHoldout = 3,
    Synthetic = 4,
}

pub struct SeededSampler {
    rng: ChaCha8Rng,
}

impl SeededSampler {
    pub fn new(seed: u64, stream: Stream) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        SeededSampler { rng }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, bound)`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        // Largest multiple of `bound` representable; reject the tail.
        let zone = u64::MAX - (u64::MAX % bound + 1) % bound;
        loop {
            let v = self.rng.next_u64();
            if v <= zone {
                return v % bound;
            }
        }
    }

    /// Picks `k` distinct indices out of `0..n` by a partial Fisher-Yates
    /// shuffle. The result is in selection order.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// Uniform real in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
