//! Weak-form residual of the Fokker–Planck equation along a measure flow.
//!
//! For a test function `phi`, the residual at grid time `t_k` is
//! `<mu(t_k), phi(t_k)> - <mu(0), phi(0)> - int_0^{t_k} <mu(r), L phi(r)> dr`
//! with `L phi = phi_t + b_x phi_x + b_h phi_h + eps^2/2 phi_xx + chi^2 h^2/2 phi_hh`,
//! `b_x = D_p H0(D_x V)` and `b_h = D_p H1(x, h, mu(r), D_h V)`. The time
//! integral uses the trapezoidal rule on the flow grid; the reported value
//! per test function is the largest absolute residual over grid times.

use rayon::prelude::*;

use crate::hamiltonian::Hamiltonian;
use crate::hjb::ValueField;
use crate::interaction::KernelPair;
use crate::measures::{EmpiricalMeasure, MeasureFlow};
use crate::numeric::Neumaier;
use crate::params::ModelParams;

/// `beta(u) = (1 - u^2)^3` on `|u| < 1`, zero outside: a C² bump.
#[inline]
fn bump(u: f64) -> (f64, f64, f64) {
    if u.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let q = 1.0 - u * u;
    (q * q * q, -6.0 * u * q * q, -6.0 * q * q + 24.0 * u * u * q)
}

/// Built-in test functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `phi = 1`; every derivative vanishes.
    Constant,
    /// `phi = (1 + slope t / T) beta((x - cx)/rx) beta((h - ch)/rh)`.
    Bump { cx: f64, rx: f64, ch: f64, rh: f64, slope: f64 },
}

/// Value and the derivatives entering the generator.
#[derive(Debug, Clone, Copy, Default)]
struct Jet {
    phi: f64,
    t: f64,
    x: f64,
    xx: f64,
    h: f64,
    hh: f64,
}

impl TestFunction {
    fn jet(&self, t: f64, horizon: f64, x: f64, h: f64) -> Jet {
        match *self {
            TestFunction::Constant => Jet { phi: 1.0, ..Jet::default() },
            TestFunction::Bump { cx, rx, ch, rh, slope } => {
                let (bx, dbx, ddbx) = bump((x - cx) / rx);
                if bx == 0.0 && dbx == 0.0 && ddbx == 0.0 {
                    return Jet::default();
                }
                let (bh, dbh, ddbh) = bump((h - ch) / rh);
                let psi = 1.0 + slope * t / horizon;
                Jet {
                    phi: psi * bx * bh,
                    t: slope / horizon * bx * bh,
                    x: psi * dbx / rx * bh,
                    xx: psi * ddbx / (rx * rx) * bh,
                    h: psi * bx * dbh / rh,
                    hh: psi * bx * ddbh / (rh * rh),
                }
            }
        }
    }

    fn touches(&self, x: f64, h: f64) -> bool {
        match *self {
            TestFunction::Constant => false,
            TestFunction::Bump { cx, rx, ch, rh, .. } => ((x - cx) / rx).abs() < 1.0 && ((h - ch) / rh).abs() < 1.0,
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// The constant function plus 18 bumps placed on the initial measure:
/// `x` centers at the mean and mean ± one standard deviation with radius two
/// standard deviations; `h` centers at the quartiles of the positive
/// capitals with radius the interquartile range; time factors `1` and
/// `1 + t/T`. A measure without positive capital gets the constant only.
pub fn builtin_test_functions(mu0: &EmpiricalMeasure) -> Vec<TestFunction> {
    let mut out = vec![TestFunction::Constant];
    let mut hs: Vec<f64> = mu0.h().iter().copied().filter(|&h| h > 0.0).collect();
    if hs.len() < 4 {
        return out;
    }
    hs.sort_by(f64::total_cmp);
    let (q1, q2, q3) = (quantile(&hs, 0.25), quantile(&hs, 0.5), quantile(&hs, 0.75));
    let rh = (q3 - q1).max(1e-12);
    let n = mu0.len() as f64;
    let mean = crate::numeric::neumaier_sum(mu0.x().iter().copied()) / n;
    let sd = (crate::numeric::neumaier_sum(mu0.x().iter().map(|x| (x - mean) * (x - mean))) / n).sqrt().max(1e-6);
    for slope in [0.0, 1.0] {
        for cx in [mean - sd, mean, mean + sd] {
            for ch in [q1, q2, q3] {
                out.push(TestFunction::Bump { cx, rx: 2.0 * sd, ch, rh, slope });
            }
        }
    }
    out
}

/// Per-test residuals and their root mean square over the bump functions.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakResidual {
    pub per_test: Vec<f64>,
    pub rms: f64,
}

/// Evaluates the weak-form residual of `flow` against the drifts of `value`.
pub fn fp_weak_residual(flow: &MeasureFlow, value: &ValueField, params: &ModelParams, tests: &[TestFunction]) -> WeakResidual {
    let ham = Hamiltonian::new(params);
    let kernels = KernelPair::from_params(params);
    let horizon = flow.horizon();
    let times = flow.times();
    let (eps2, chi2) = (params.eps * params.eps, params.chi * params.chi);
    // Per time: (<mu, phi>, <mu, L phi>) for every test function.
    let per_time: Vec<Vec<(f64, f64)>> = times
        .par_iter()
        .zip(flow.measures())
        .map(|(&t, mu)| {
            let mut pairs = vec![(Neumaier::new(), Neumaier::new()); tests.len()];
            for i in 0..mu.len() {
                let (x, h, w) = (mu.x()[i], mu.h()[i], mu.weights()[i]);
                let needed = tests.iter().any(|f| f.touches(x, h));
                let (bx, bh) = if needed {
                    let g = value.gradients(t, x, h);
                    let bh = if h > 0.0 { ham.dp_h1(&ham.site(x, h, kernels.f(x, mu)), g.dh_v) } else { 0.0 };
                    (ham.dp_h0(g.dx_v), bh)
                } else {
                    (0.0, 0.0)
                };
                for (f, acc) in tests.iter().zip(pairs.iter_mut()) {
                    let j = f.jet(t, horizon, x, h);
                    acc.0.add(w * j.phi);
                    let gen = j.t + bx * j.x + bh * j.h + 0.5 * eps2 * j.xx + 0.5 * chi2 * h * h * j.hh;
                    acc.1.add(w * gen);
                }
            }
            pairs.into_iter().map(|(a, b)| (a.value(), b.value())).collect()
        })
        .collect();
    let dt = flow.dt();
    let per_test: Vec<f64> = (0..tests.len())
        .map(|f| {
            let base = per_time[0][f].0;
            let mut integral = 0.0;
            let mut worst: f64 = 0.0;
            for k in 1..times.len() {
                integral += 0.5 * dt * (per_time[k - 1][f].1 + per_time[k][f].1);
                worst = worst.max((per_time[k][f].0 - base - integral).abs());
            }
            worst
        })
        .collect();
    let bumps: Vec<f64> = tests.iter().zip(&per_test).filter(|(t, _)| !matches!(t, TestFunction::Constant)).map(|(_, r)| *r).collect();
    let rms = if bumps.is_empty() { 0.0 } else { (bumps.iter().map(|r| r * r).sum::<f64>() / bumps.len() as f64).sqrt() };
    WeakResidual { per_test, rms }
}
