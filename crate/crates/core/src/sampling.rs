//! Reproducible uniform sampling.
//!
//! The generator is SplitMix64 with its state initialized to the seed. Each
//! draw maps a 64-bit output `r` to `u = (r >> 11) · 2⁻⁵³ ∈ [0, 1)` and then to
//! `(2u − 1) · C` on `[−C, C]`. Matrices are filled token by token
//! (column-major), each column top to bottom.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::numerics::DenseMatrix;

pub struct Sampler {
    rng: SplitMix64,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform on `[−c, c)`.
    pub fn symmetric(&mut self, c: f64) -> f64 {
        (2.0 * self.unit() - 1.0) * c
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, c: f64) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m.set(i, j, self.symmetric(c));
            }
        }
        m
    }

    pub fn matrices(&mut self, count: usize, rows: usize, cols: usize, c: f64) -> Vec<DenseMatrix> {
        (0..count).map(|_| self.matrix(rows, cols, c)).collect()
    }
}
