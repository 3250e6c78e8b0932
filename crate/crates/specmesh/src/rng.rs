//! Deterministic random number generation.
//!
//! Built on the ChaCha8 stream cipher (a published counter-based generator):
//! the same seed yields the same stream on every platform, and independent
//! child generators are derived by assigning distinct ChaCha stream ids.
//! The root generator uses stream 0; `split(child_id)` uses stream
//! `child_id + 1`, so a child never aliases its parent.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator for a child task. Deterministic regardless of
    /// how much the parent has already drawn.
    pub fn split(&self, child_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(child_id.wrapping_add(1));
        SeededRng {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn same_split_path_same_stream() {
        let a = SeededRng::new(7);
        let b = SeededRng::new(7);
        let mut ca = a.split(3);
        let mut cb = b.split(3);
        for _ in 0..1000 {
            assert_eq!(ca.next_u64(), cb.next_u64());
        }
    }

    #[test]
    fn distinct_children_distinct_streams() {
        let root = SeededRng::new(1234);
        let mut c0 = root.split(0);
        let mut c1 = root.split(1);
        let d0: Vec<u64> = (0..10).map(|_| c0.next_u64()).collect();
        let d1: Vec<u64> = (0..10).map(|_| c1.next_u64()).collect();
        assert_ne!(d0, d1);
    }

    #[test]
    fn child_differs_from_parent() {
        let mut root = SeededRng::new(9);
        let mut child = root.split(0);
        let dr: Vec<u64> = (0..10).map(|_| root.next_u64()).collect();
        let dc: Vec<u64> = (0..10).map(|_| child.next_u64()).collect();
        assert_ne!(dr, dc);
    }

    // Golden draws pin the generator choice: if the algorithm or the
    // seed-expansion ever changes these fail.
    #[test]
    fn golden_first_draws() {
        let mut r = SeededRng::new(0);
        let first: Vec<u64> = (0..4).map(|_| r.next_u64()).collect();
        assert_eq!(
            first,
            vec![
                0xb585f767a79a3b6c,
                0x7746a55fbad8c037,
                0xb2fb0d3281e2a6e6,
                0x0f6760a48f9b887c,
            ]
        );
        let mut child = SeededRng::new(7).split(0);
        assert_eq!(child.next_u64(), 0xfdfad737a8d7aac7);
        assert_eq!(child.next_u64(), 0x025131771b7a4e55);
        let mut u = SeededRng::new(0);
        assert!((u.uniform() - 0.70907541542656183).abs() < 1e-16);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = SeededRng::new(5);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}

