//! Shared oracles and samplers for the integration tests.
#![allow(dead_code)]

use mfg_core::measures::EmpiricalMeasure;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub struct Sampler(ChaCha8Rng);

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn index(&mut self, n: usize) -> usize {
        (self.unit() * n as f64) as usize
    }

    /// Uniform cloud of `n` atoms in `[-1,1] x [0, h_max]`.
    pub fn cloud(&mut self, n: usize, h_max: f64) -> EmpiricalMeasure {
        let x = (0..n).map(|_| self.range(-1.0, 1.0)).collect();
        let h = (0..n).map(|_| self.range(0.0, h_max)).collect();
        EmpiricalMeasure::uniform(x, h).unwrap()
    }
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Minimum over all bijections of the mean pairing cost between two uniform
/// measures of equal size.
pub fn permutation_cost(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, ground: impl Fn(f64, f64) -> f64) -> f64 {
    let n = mu.len();
    assert_eq!(n, nu.len());
    permutations(n)
        .iter()
        .map(|perm| {
            let total: f64 = perm.iter().enumerate().map(|(i, &j)| ground(mu.x()[i] - nu.x()[j], mu.h()[i] - nu.h()[j])).sum();
            total / n as f64
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn permutation_w2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    permutation_cost(mu, nu, |dx, dh| dx * dx + dh * dh).sqrt()
}

pub fn permutation_w1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    permutation_cost(mu, nu, |dx, dh| (dx * dx + dh * dh).sqrt())
}

/// The same measure with every atom split into two half-weight copies.
pub fn split_atoms(mu: &EmpiricalMeasure) -> EmpiricalMeasure {
    let mut x = Vec::new();
    let mut h = Vec::new();
    let mut w = Vec::new();
    for i in 0..mu.len() {
        for _ in 0..2 {
            x.push(mu.x()[i]);
            h.push(mu.h()[i]);
            w.push(0.5 * mu.weights()[i]);
        }
    }
    EmpiricalMeasure::new(x, h, w).unwrap()
}
