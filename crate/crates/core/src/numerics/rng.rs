//! Counter-based seeded PRNG (splitmix64) for deterministic initialization,
//! cropping, and the frozen stand-in networks.
//!
//! Identical seeds produce bitwise-identical streams on every platform: the
//! generator is pure 64-bit integer arithmetic, and uniform floats are built
//! from the top 53 bits.

use crate::scalar::{from_f64, Scalar};
use crate::Tensor;

#[derive(Clone, Debug)]
pub struct SeededRng {
    state: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derives an independent stream for `label` without advancing `self`.
    pub fn split(&self, label: &str) -> SeededRng {
        // FNV-1a over the label, mixed into the current state.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let mut child = SeededRng {
            state: self.state ^ h,
        };
        child.next_u64();
        child
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi) as the working scalar type.
    pub fn uniform<T: Scalar>(&mut self, lo: f64, hi: f64) -> T {
        from_f64(lo + (hi - lo) * self.uniform_f64())
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    pub fn tensor_uniform<T: Scalar>(&mut self, dims: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        Tensor::from_fn(dims, |_| self.uniform(lo, hi))
    }
}
