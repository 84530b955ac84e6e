//! SplitMix64 counter generator.
//!
//! Draw `i` (zero based) of a stream seeded with `s` is
//! `mix(s + (i + 1) * 0x9E3779B97F4A7C15)` with wrapping arithmetic, where
//!
//! ```text
//! mix(z):
//!   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!   z ^ (z >> 31)
//! ```
//!
//! Derived quantities:
//! - `next_f64`: `(next_u64 >> 11) * 2^-53`, in `[0, 1)`
//! - `below(n)`: Lemire multiply-shift with rejection, unbiased
//! - `split(stream)`: a new generator seeded `mix(seed ^ mix(stream + GAMMA))`
//!
//! The stream is identical on every platform; nothing depends on the host's
//! word size or float environment beyond IEEE-754 `f64`.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Seed of an independent child stream; a pure function of `(seed, stream)`.
    pub fn derive_seed(seed: u64, stream: u64) -> u64 {
        mix(seed ^ mix(stream.wrapping_add(GAMMA)))
    }

    /// Independent generator for `stream`, leaving `self` untouched.
    pub fn split(&self, stream: u64) -> Rng {
        Rng::new(Self::derive_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`. Panics when `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = self.next_u64() as u128 * n as u128;
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        lo + self.below((hi - lo) as u64 + 1) as i64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates, drawing from the top index down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
