//! Deterministic PRNG streams with documented derivation.
//!
//! Every random decision in the crate flows from one root seed through
//! [`StreamKey`]:
//!
//! 1. A key starts as the root seed mixed once with SplitMix64.
//! 2. `child(tag)` XORs a tag into the state and mixes again, so keys form a
//!    tree addressed by `(domain, index, index, ...)` paths.
//! 3. `stream()` expands the key into a 32-byte ChaCha8 seed via four
//!    further SplitMix64 outputs.
//!
//! Floating-point draws use fixed mappings from raw `u64`s (53-bit mantissa
//! for uniforms, trigonometric Box-Muller for normals), so identical keys
//! yield bit-identical sequences on every platform and worker count.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream-derivation domains. Each independent consumer of randomness owns
/// one tag so streams never collide.
pub mod domain {
    pub const SYNTH: u64 = 0x01;
    pub const POISON: u64 = 0x02;
    pub const SHUFFLE: u64 = 0x03;
    pub const TRAIN_TRANSFORM: u64 = 0x04;
    pub const INIT: u64 = 0x05;
    pub const PROBE_SELECT: u64 = 0x06;
    pub const PROBE_TRANSFORM: u64 = 0x07;
    pub const TARGET_START: u64 = 0x08;
    pub const PREVIEW: u64 = 0x09;
    pub const NOISE: u64 = 0x0a;
    pub const RUN: u64 = 0x0b;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Address of a derived PRNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(root_seed: u64) -> Self {
        let mut s = root_seed;
        StreamKey(splitmix64(&mut s))
    }

    /// Derives a child key for `tag` (a domain constant or an index).
    #[must_use]
    pub fn child(self, tag: u64) -> Self {
        let mut s = self.0 ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        StreamKey(splitmix64(&mut s))
    }

    /// The key's raw value, usable as a derived root seed.
    pub fn value(self) -> u64 {
        self.0
    }

    /// Expands the key into a concrete ChaCha8 stream.
    pub fn stream(self) -> Stream {
        let mut s = self.0;
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        Stream {
            rng: ChaCha8Rng::from_seed(seed),
        }
    }
}

/// A seeded random stream with fixed value mappings.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    /// One raw 64-bit draw. All other methods are defined in terms of this.
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`: the top 53 bits of one raw draw.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in `[lo, hi)`. Consumes exactly one draw.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64()
    }

    /// True with probability `p`. Consumes exactly one draw.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit_f64() < p
    }

    /// Standard normal via trigonometric Box-Muller:
    /// `z = sqrt(-2 ln u1) * cos(2 pi u2)` with `u1` in `(0, 1]`.
    /// Consumes exactly two draws.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0);
        let u2 = self.unit_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform index in `[0, n)` by modulo reduction. Consumes one draw.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher-Yates shuffle using [`Stream::index`] draws.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.index(i + 1);
            slice.swap(i, j);
        }
    }

    /// First `k` elements of a seeded uniform draw without replacement:
    /// a partial Fisher-Yates over `0..n`.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_keys_give_identical_sequences() {
        let mut a = StreamKey::new(42).child(domain::SYNTH).child(7).stream();
        let mut b = StreamKey::new(42).child(domain::SYNTH).child(7).stream();
        for _ in 0..64 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn sibling_streams_differ() {
        let root = StreamKey::new(42);
        let a: Vec<u64> = {
            let mut s = root.child(domain::SYNTH).stream();
            (0..8).map(|_| s.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut s = root.child(domain::POISON).stream();
            (0..8).map(|_| s.next_u64()).collect()
        };
        assert_ne!(a, b);
    }

    #[test]
    fn unit_f64_stays_in_unit_interval() {
        let mut s = StreamKey::new(1).stream();
        for _ in 0..10_000 {
            let v = s.unit_f64();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn normal_moments_are_plausible() {
        let mut s = StreamKey::new(3).stream();
        let n = 50_000;
        let xs: Vec<f64> = (0..n).map(|_| s.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "variance {var}");
    }

    #[test]
    fn choose_indices_draws_distinct_values() {
        let mut s = StreamKey::new(9).stream();
        let picked = s.choose_indices(100, 30);
        assert_eq!(picked.len(), 30);
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 30);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut s = StreamKey::new(11).stream();
        let mut v: Vec<usize> = (0..50).collect();
        s.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, (0..50).collect::<Vec<_>>());
    }
}
