//! Named, counter-based random streams.
//!
//! Every source of randomness in the crate draws from a [`SeedStream`]
//! identified by a root seed and a stream name. A stream is a pure function
//! of `(key, counter)`, so state can be checkpointed as a single counter and
//! independent streams never interact, regardless of call order elsewhere.

use alloc::string::String;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_name(name: &str) -> u64 {
    // FNV-1a, then one avalanche round.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

/// A deterministic random stream addressed by `(seed, name)`.
#[derive(Debug, Clone)]
pub struct SeedStream {
    key: u64,
    counter: u64,
    name: String,
}

impl SeedStream {
    pub fn new(seed: u64, name: &str) -> Self {
        Self {
            key: mix64(seed ^ hash_name(name)),
            counter: 0,
            name: String::from(name),
        }
    }

    /// Derives an independent child stream; useful for per-sample or
    /// per-trial substreams that may be consumed in any order.
    pub fn substream(&self, index: u64) -> Self {
        Self {
            key: mix64(self.key ^ index.wrapping_mul(GOLDEN).wrapping_add(GOLDEN)),
            counter: 0,
            name: self.name.clone(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of raw draws consumed so far; together with `(seed, name)`
    /// this fully describes the stream state.
    pub fn position(&self) -> u64 {
        self.counter
    }

    pub fn set_position(&mut self, counter: u64) {
        self.counter = counter;
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = mix64(self.key ^ self.counter.wrapping_mul(GOLDEN).wrapping_add(1));
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in `(0, 1)`; safe as a log argument.
    fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)` via widening multiply (order preserving,
    /// negligible bias for the sizes used here).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Standard normal via Box–Muller; consumes exactly two raw draws.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Fisher–Yates shuffle with this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
