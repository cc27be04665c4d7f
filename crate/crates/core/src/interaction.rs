//! The nonlocal interaction functional
//! `F(x, mu) = <<mu, b1>>(x) / <<mu, b2>>(x)` with
//! `b1(x, y; k) = eta1(|x - y|) k` and `b2(x, y) = eta2(|x - y|)`.

use rayon::prelude::*;

use crate::measures::{moment_m, moment_m2, EmpiricalMeasure, MeasureFlow};
use crate::numeric::Neumaier;
use crate::params::{Kernel, ModelParams};

/// The two interaction kernels together with the bounds `theta <= eta_i <= Theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelPair {
    pub eta1: Kernel,
    pub eta2: Kernel,
    pub theta: f64,
    pub big_theta: f64,
}

impl KernelPair {
    pub fn from_params(p: &ModelParams) -> Self {
        Self { eta1: p.kernel1, eta2: p.kernel2, theta: p.theta_lo, big_theta: p.theta_hi }
    }

    /// Both brackets at `x`, summed in atom order with compensation.
    pub fn brackets(&self, mu: &EmpiricalMeasure, x: f64) -> (f64, f64) {
        let same = self.eta1.length == self.eta2.length;
        let (l1, l2) = (self.eta1.length, self.eta2.length);
        let (a1, a2) = (self.eta1.cap - self.eta1.floor, self.eta2.cap - self.eta2.floor);
        let mut b1 = Neumaier::new();
        let mut b2 = Neumaier::new();
        let (xs, hs, ws) = (mu.x(), mu.h(), mu.weights());
        for i in 0..xs.len() {
            let r = x - xs[i];
            let e1 = (-(r / l1) * (r / l1)).exp();
            let e2 = if same { e1 } else { (-(r / l2) * (r / l2)).exp() };
            let k1 = self.eta1.floor + a1 * e1;
            let k2 = self.eta2.floor + a2 * e2;
            b1.add(ws[i] * k1 * hs[i]);
            b2.add(ws[i] * k2);
        }
        (b1.value(), b2.value())
    }

    /// `<<mu, b1>>(x) = sum w_i eta1(|x - x_i|) h_i`.
    pub fn bracket_b1(&self, mu: &EmpiricalMeasure, x: f64) -> f64 {
        self.brackets(mu, x).0
    }

    /// `<<mu, b2>>(x) = sum w_i eta2(|x - x_i|)`.
    pub fn bracket_b2(&self, mu: &EmpiricalMeasure, x: f64) -> f64 {
        self.brackets(mu, x).1
    }

    /// `F(x, mu)`; exactly 0 when `M(mu) = 0`.
    pub fn f(&self, x: f64, mu: &EmpiricalMeasure) -> f64 {
        let (b1, b2) = self.brackets(mu, x);
        if b1 == 0.0 {
            0.0
        } else {
            b1 / b2
        }
    }

    /// `F` at many query points, in parallel over points.
    pub fn f_many(&self, mu: &EmpiricalMeasure, xs: &[f64]) -> Vec<f64> {
        xs.par_iter().map(|&x| self.f(x, mu)).collect()
    }
}

pub fn bracket_b1(p: &ModelParams, mu: &EmpiricalMeasure, x: f64) -> f64 {
    KernelPair::from_params(p).bracket_b1(mu, x)
}

pub fn bracket_b2(p: &ModelParams, mu: &EmpiricalMeasure, x: f64) -> f64 {
    KernelPair::from_params(p).bracket_b2(mu, x)
}

/// The interaction functional `F(x, mu)`.
pub fn big_f(p: &ModelParams, x: f64, mu: &EmpiricalMeasure) -> f64 {
    KernelPair::from_params(p).f(x, mu)
}

/// Outcome of the sweep `(theta/Theta) M <= F <= (Theta/theta) M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FBoundsReport {
    pub holds: bool,
    /// Smallest of `F - lower` and `upper - F` over the sweep.
    pub worst_slack: f64,
    pub worst_x: f64,
}

/// Checks the two-sided bound on a deterministic sweep of `n` points of `[x_lo, x_hi]`.
pub fn f_bounds_check(p: &ModelParams, mu: &EmpiricalMeasure, x_lo: f64, x_hi: f64, n: usize) -> FBoundsReport {
    let kp = KernelPair::from_params(p);
    let m = moment_m(mu);
    let r = p.theta_lo / p.theta_hi;
    let (lower, upper) = (r * m, m / r);
    let mut rep = FBoundsReport { holds: true, worst_slack: f64::INFINITY, worst_x: x_lo };
    for x in crate::numeric::linspace(x_lo, x_hi, n) {
        let f = kp.f(x, mu);
        let slack = (f - lower).min(upper - f);
        if f < lower || f > upper {
            rep.holds = false;
        }
        if slack < rep.worst_slack {
            rep.worst_slack = slack;
            rep.worst_x = x;
        }
    }
    rep
}

/// `2 L_eta Theta theta^{-2} M(mu)` with `L_eta = max(L_eta1, L_eta2)`.
pub fn f_lipschitz_x_constant(p: &ModelParams, mu: &EmpiricalMeasure) -> f64 {
    let l = p.l_eta1().max(p.l_eta2());
    2.0 * l * p.theta_hi / (p.theta_lo * p.theta_lo) * moment_m(mu)
}

/// `Theta theta^{-2} (sqrt(M2(mu)) (L_eta1 + L_eta2) + Theta)`.
pub fn f_lipschitz_mu_constant(p: &ModelParams, mu: &EmpiricalMeasure) -> f64 {
    p.theta_hi / (p.theta_lo * p.theta_lo) * (moment_m2(mu).sqrt() * (p.l_eta1() + p.l_eta2()) + p.theta_hi)
}

/// `F(., mu(t_k))` tabulated on a uniform x-grid for every time of a flow.
/// Queries inside the table interpolate linearly; queries outside fall back
/// to exact evaluation.
#[derive(Debug, Clone)]
pub struct FTable {
    kernels: KernelPair,
    x0: f64,
    dx: f64,
    n: usize,
    values: Vec<Vec<f64>>,
}

impl FTable {
    pub fn new(p: &ModelParams, flow: &MeasureFlow, x_lo: f64, x_hi: f64, n: usize) -> Self {
        let kernels = KernelPair::from_params(p);
        let xs = crate::numeric::linspace(x_lo, x_hi, n);
        let values = flow.measures().iter().map(|mu| kernels.f_many(mu, &xs)).collect();
        Self { kernels, x0: x_lo, dx: (x_hi - x_lo) / (n - 1) as f64, n, values }
    }

    /// Table covering the atoms of the flow plus a margin of `margin`.
    pub fn covering(p: &ModelParams, flow: &MeasureFlow, margin: f64, n: usize) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for m in flow.measures() {
            for &x in m.x() {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        Self::new(p, flow, lo - margin, hi + margin, n)
    }

    pub fn eval(&self, k: usize, x: f64, flow: &MeasureFlow) -> f64 {
        let s = (x - self.x0) / self.dx;
        if !(s >= 0.0 && s <= (self.n - 1) as f64) {
            return self.kernels.f(x, flow.measure(k));
        }
        let i = (s.floor() as usize).min(self.n - 2);
        let fr = s - i as f64;
        let row = &self.values[k];
        row[i] + fr * (row[i + 1] - row[i])
    }
}
