//! Sample paths of the state equations.
//!
//! Positions follow Euler–Maruyama. Capital is stepped in `y = ln h`:
//! `y' = y + (s f(h) F / h - zeta - chi^2/2) dt + chi dW`, so unmasked atoms
//! stay strictly positive and atoms started at zero stay at zero.

pub mod weak;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::Hamiltonian;
use crate::hjb::{Policy, ValueField};
use crate::interaction::{FTable, KernelPair};
use crate::measures::{moment_m, moment_m2, moment_p2, EmpiricalMeasure, MeasureFlow};
use crate::numeric::Neumaier;
use crate::params::ModelParams;
use crate::rng::NoiseKey;

pub use weak::{builtin_test_functions, fp_weak_residual, TestFunction, WeakResidual};

/// Particle state with an explicit zero-capital mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub x: Vec<f64>,
    /// `ln h` for unmasked atoms; unused (kept at 0) for masked ones.
    pub y: Vec<f64>,
    /// Capital, `e^y` or exactly 0; initial values are kept bit for bit.
    pub h: Vec<f64>,
    pub zero: Vec<bool>,
    pub time: f64,
}

impl ParticleEnsemble {
    /// Ensemble from a uniform-weight measure.
    pub fn from_measure(mu: &EmpiricalMeasure, time: f64) -> Result<Self> {
        if !mu.is_uniform() {
            return Err(Error::InvalidMeasure("particle ensembles need uniform weights".into()));
        }
        let zero: Vec<bool> = mu.h().iter().map(|&h| h == 0.0).collect();
        let y = mu.h().iter().map(|&h| if h > 0.0 { h.ln() } else { 0.0 }).collect();
        Ok(Self { x: mu.x().to_vec(), y, h: mu.h().to_vec(), zero, time })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn to_measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.x.clone(), self.h.clone()).expect("ensemble atoms are valid")
    }
}

/// One row of per-time flow diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowDiagnostics {
    pub t: f64,
    pub m: f64,
    pub m2: f64,
    pub p2: f64,
    /// Smallest positive capital; infinite when every atom is at zero.
    pub min_h_unmasked: f64,
}

pub fn flow_diagnostics(flow: &MeasureFlow) -> Vec<FlowDiagnostics> {
    flow.times()
        .iter()
        .zip(flow.measures())
        .map(|(&t, mu)| FlowDiagnostics {
            t,
            m: moment_m(mu),
            m2: moment_m2(mu),
            p2: moment_p2(mu),
            min_h_unmasked: mu.h().iter().copied().filter(|&h| h > 0.0).fold(f64::INFINITY, f64::min),
        })
        .collect()
}

/// Output of the interacting particle system.
#[derive(Debug, Clone)]
pub struct MkvRun {
    pub flow: MeasureFlow,
    pub diagnostics: Vec<FlowDiagnostics>,
    /// Gradient queries that fell outside the value grid and were clamped.
    pub clamped_queries: usize,
}

/// Simulates the McKean–Vlasov particle system on the time grid of `value`,
/// each particle driven by the feedback drifts read off `value` and by the
/// empirical measure of the ensemble at the current step. Noise for particle
/// `i` at step `n` is drawn from stream `i`, block `n` of the `seed` key.
pub fn simulate_mkv(ensemble0: &ParticleEnsemble, value: &ValueField, params: &ModelParams, seed: u64) -> Result<MkvRun> {
    let grid = &value.grid;
    let nt = grid.n_t();
    let dt = grid.dt();
    let sq = dt.sqrt();
    let ham = Hamiltonian::new(params);
    let kernels = KernelPair::from_params(params);
    let key = NoiseKey::new(seed, "mkv");
    let ito = 0.5 * params.chi * params.chi;
    let mut ens = ensemble0.clone();
    ens.time = grid.times[0];
    let mut measures = Vec::with_capacity(nt);
    let mut clamped = 0usize;
    for n in 0..nt {
        let mu = ens.to_measure();
        if n + 1 == nt {
            measures.push(mu);
            break;
        }
        let big_f = kernels.f_many(&mu, &ens.x);
        let stepped: Vec<(f64, f64, bool)> = (0..ens.len())
            .into_par_iter()
            .map(|i| {
                let (x, zero) = (ens.x[i], ens.zero[i]);
                let h = ens.h[i];
                let g = value.gradients_at_step(n, x, h);
                let v = ham.dp_h0(g.dx_v);
                let (z1, z2) = key.normals2(i as u64, n as u64);
                let x1 = x + v * dt + params.eps * sq * z1;
                let y1 = if zero {
                    0.0
                } else {
                    let site = ham.site(x, h, big_f[i]);
                    let drift = ham.dp_h1(&site, g.dh_v) / h - ito;
                    ens.y[i] + drift * dt + params.chi * sq * z2
                };
                (x1, y1, g.clamped)
            })
            .collect();
        for (i, (x1, y1, c)) in stepped.into_iter().enumerate() {
            if !x1.is_finite() {
                return Err(Error::NonFinite { what: "position".into(), step: n, atom: i });
            }
            if !y1.is_finite() {
                return Err(Error::NonFinite { what: "log-capital".into(), step: n, atom: i });
            }
            ens.x[i] = x1;
            if !ens.zero[i] {
                ens.y[i] = y1;
                ens.h[i] = y1.exp();
            }
            clamped += c as usize;
        }
        ens.time = grid.times[n + 1];
        measures.push(mu);
    }
    let flow = MeasureFlow::new(grid.times.clone(), measures)?;
    let diagnostics = flow_diagnostics(&flow);
    Ok(MkvRun { flow, diagnostics, clamped_queries: clamped })
}

/// Settings of the controlled single-agent simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlledOptions {
    /// Fine steps per step of the measure flow.
    pub substeps: usize,
    pub seed: u64,
    /// Index of the flow time at which paths start.
    pub t0_index: usize,
}

/// Everything a controlled path needs besides its start and policy.
pub(crate) struct ControlledContext<'a> {
    pub flow: &'a MeasureFlow,
    pub table: &'a FTable,
    pub ham: Hamiltonian,
    pub eps: f64,
    pub chi: f64,
    pub key: NoiseKey,
    pub substeps: usize,
    pub t0_index: usize,
}

impl<'a> ControlledContext<'a> {
    pub fn new(flow: &'a MeasureFlow, table: &'a FTable, params: &ModelParams, opts: &ControlledOptions) -> Result<Self> {
        if opts.substeps == 0 {
            return Err(Error::Invalid("substeps must be positive".into()));
        }
        if opts.t0_index >= flow.n_steps() {
            return Err(Error::Invalid(format!("start index {} leaves no steps before the horizon", opts.t0_index)));
        }
        Ok(Self {
            flow,
            table,
            ham: Hamiltonian::new(params),
            eps: params.eps,
            chi: params.chi,
            key: NoiseKey::new(opts.seed, "controlled"),
            substeps: opts.substeps,
            t0_index: opts.t0_index,
        })
    }

    pub fn fine_dt(&self) -> f64 {
        self.flow.dt() / self.substeps as f64
    }

    pub fn first_step(&self) -> usize {
        self.t0_index * self.substeps
    }

    pub fn last_step(&self) -> usize {
        self.flow.n_steps() * self.substeps
    }

    pub fn time(&self, j: usize) -> f64 {
        self.flow.times()[0] + j as f64 * self.fine_dt()
    }

    /// Runs one path, calling `visit(j, t, x, h, v, s, F)` at every fine
    /// node from the start to the horizon inclusive. The noise of fine step
    /// `j` is block `j` of stream `path`, so paths started at different
    /// times still share increments.
    pub fn run<P: Policy + ?Sized>(&self, policy: &P, path: u64, x0: f64, h0: f64, mut visit: impl FnMut(usize, f64, f64, f64, f64, f64, f64)) -> Result<()> {
        let dt = self.fine_dt();
        let sq = dt.sqrt();
        let ito = 0.5 * self.chi * self.chi;
        let zero = h0 == 0.0;
        let mut x = x0;
        let mut y = if zero { 0.0 } else { h0.ln() };
        let mut h = h0;
        let (j0, j1) = (self.first_step(), self.last_step());
        for j in j0..=j1 {
            let t = self.time(j);
            let k = (j / self.substeps).min(self.flow.n_steps());
            let big_f = if zero { 0.0 } else { self.table.eval(k, x, self.flow) };
            let (v, s) = policy.control(t, x, h, big_f);
            visit(j, t, x, h, v, s, big_f);
            if j == j1 {
                break;
            }
            let (z1, z2) = self.key.normals2(path, j as u64);
            x += v * dt + self.eps * sq * z1;
            if !zero {
                let fh = self.ham.f_spec.eval(h);
                y += (s * fh * big_f / h - self.ham.zeta - ito) * dt + self.chi * sq * z2;
                h = y.exp();
            }
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::NonFinite { what: "controlled state".into(), step: j, atom: path as usize });
            }
        }
        Ok(())
    }
}

/// Stored controlled paths on the fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub streams: Vec<u64>,
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.x.len()
    }

    /// Path states at each fine time as a uniform-weight measure flow.
    pub fn to_flow(&self) -> Result<MeasureFlow> {
        let measures = (0..self.times.len())
            .map(|k| EmpiricalMeasure::uniform(self.x.iter().map(|p| p[k]).collect(), self.h.iter().map(|p| p[k]).collect()))
            .collect::<Result<Vec<_>>>()?;
        MeasureFlow::new(self.times.clone(), measures)
    }
}

/// Simulates one controlled path per start point under `policy` against the
/// given measure flow. Path `i` uses noise stream `i`.
pub fn simulate_controlled<P: Policy + ?Sized>(
    starts: &[(f64, f64)],
    policy: &P,
    mu_flow: &MeasureFlow,
    params: &ModelParams,
    opts: &ControlledOptions,
) -> Result<PathBundle> {
    let table = FTable::covering(params, mu_flow, 0.5, 1025);
    let ctx = ControlledContext::new(mu_flow, &table, params, opts)?;
    let times: Vec<f64> = (ctx.first_step()..=ctx.last_step()).map(|j| ctx.time(j)).collect();
    let paths: Vec<[Vec<f64>; 4]> = starts
        .par_iter()
        .enumerate()
        .map(|(i, &(x0, h0))| {
            let mut rec: [Vec<f64>; 4] = Default::default();
            ctx.run(policy, i as u64, x0, h0, |_, _, x, h, v, s, _| {
                rec[0].push(x);
                rec[1].push(h);
                rec[2].push(s);
                rec[3].push(v);
            })?;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut b = PathBundle { times, x: vec![], h: vec![], s: vec![], v: vec![], streams: (0..starts.len() as u64).collect() };
    for [x, h, s, v] in paths {
        b.x.push(x);
        b.h.push(h);
        b.s.push(s);
        b.v.push(v);
    }
    Ok(b)
}

/// Constants of the existence argument for a given initial law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HorizonConstants {
    /// Right side of the admissibility condition on `K1`.
    pub k1_floor: f64,
    /// `K1` with 10% headroom over the floor.
    pub k1: f64,
    /// Admissible horizon; infinite when `E[h0^2] = 0`.
    pub t_max: f64,
    /// Hölder constant at `(K1, T_max)`; at `(K1, horizon)` when `T_max` is infinite.
    pub k2: f64,
    /// Horizon at which the `C` constants are evaluated.
    pub horizon: f64,
    /// `sqrt(2 K1)`, the bound on `M` along flows of the admissible set.
    pub m_bar: f64,
    pub e_h0_sq: f64,
    pub c12: f64,
    pub c14: f64,
    pub c22: f64,
    pub c24: f64,
    pub b02: f64,
    pub b04: f64,
}

/// `B_{0,p} = (p^3 / (2p - 2))^{p/2}`.
pub fn b0(p: f64) -> f64 {
    (p * p * p / (2.0 * p - 2.0)).powf(0.5 * p)
}

/// `(C_{1,p}, C_{2,p})` at horizon `t` with `M_bar = m_bar`.
pub fn c_constants(params: &ModelParams, p: f64, t: f64, m_bar: f64) -> (f64, f64) {
    let four_t = (4.0 * t).powf(p - 1.0);
    let c1 = four_t * (params.theta_ratio() * m_bar).powf(p);
    let c2 = c1 * params.l_f().powf(p) + four_t * params.zeta.powf(p) + 4f64.powf(p - 1.0) * b0(p) * params.chi.powf(p) * t.powf(0.5 * (p - 2.0));
    (c1, c2)
}

/// `T_max` for a given `K1`: zero when `K1 <= 3 E[h0^2]`, infinite when `E[h0^2] = 0`.
pub fn t_max_for(params: &ModelParams, k1: f64, e_h0_sq: f64) -> f64 {
    if e_h0_sq == 0.0 {
        return f64::INFINITY;
    }
    let log = (k1 / (3.0 * e_h0_sq)).ln();
    if log <= 0.0 {
        return 0.0;
    }
    let chi2 = params.chi * params.chi;
    let g = params.zeta + 2.0 * params.theta_ratio() * (2.0 * k1).sqrt();
    let g2 = g * g;
    ((144.0 * chi2 * chi2 + 48.0 * g2 * log).sqrt() - 12.0 * chi2) / (24.0 * g2)
}

/// Hölder constant `K2` at `(K1, T)`.
pub fn k2_for(params: &ModelParams, k1: f64, t: f64) -> f64 {
    let b = params.b_bar();
    let drift = params.zeta + params.theta_ratio() * (2.0 * k1).sqrt();
    (4.0 * t * (b * b + drift * drift * k1) + 2.0 * params.eps * params.eps + 8.0 * params.chi * params.chi * k1).sqrt()
}

/// Computes `K1`, `T_max`, `K2` and the moment constants for the initial
/// measure `mu0`. The `C` constants use `params.horizon`.
pub fn horizon_constants(mu0: &EmpiricalMeasure, params: &ModelParams) -> HorizonConstants {
    let mut e_sq = Neumaier::new();
    let mut e_h_sq = Neumaier::new();
    for i in 0..mu0.len() {
        let (x, h, w) = (mu0.x()[i], mu0.h()[i], mu0.weights()[i]);
        e_sq.add(w * (x * x + h * h));
        e_h_sq.add(w * h * h);
    }
    let e_h0_sq = e_h_sq.value();
    let b = params.b_bar();
    let k1_floor = 3.0 * e_sq.value() + 3.0 * b * b + 12.0 * params.eps;
    let k1 = 1.1 * k1_floor;
    let t_max = t_max_for(params, k1, e_h0_sq);
    let k2 = k2_for(params, k1, if t_max.is_finite() { t_max } else { params.horizon });
    let m_bar = (2.0 * k1).sqrt();
    let t = params.horizon;
    let (c12, c22) = c_constants(params, 2.0, t, m_bar);
    let (c14, c24) = c_constants(params, 4.0, t, m_bar);
    HorizonConstants { k1_floor, k1, t_max, k2, horizon: t, m_bar, e_h0_sq, c12, c14, c22, c24, b02: b0(2.0), b04: b0(4.0) }
}

/// One grid time of the moment-bound comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentRow {
    pub t: f64,
    pub sup_h2_mean: f64,
    pub sup_h2_se: f64,
    pub sup_h2_bound: f64,
    pub mean_h: f64,
    pub mean_h_se: f64,
    pub mean_h_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    /// Confidence multiplier applied to the standard errors.
    pub z: f64,
    pub c22: f64,
    pub holds: bool,
    /// Smallest `bound - (mean - z se)` over rows, for each estimate.
    pub min_slack_sup_h2: f64,
    pub min_slack_mean_h: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = crate::numeric::neumaier_sum(v.iter().copied()) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = crate::numeric::neumaier_sum(v.iter().map(|a| (a - mean) * (a - mean))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Checks `E[sup_{s<=t} h^2] <= 4 e^{C22 (t - t0)} E[h0^2]` and
/// `E[h(t)] <= 2 e^{C22 (T - t0)/2} E[h0^2]^{1/2}` at every time of a
/// particle-aligned flow (atom `i` of every measure is path `i`), accepting
/// when the empirical mean minus `z` standard errors is below the bound.
pub fn moment_bound_check(flow: &MeasureFlow, c22: f64, z: f64) -> MomentReport {
    let n = flow.measure(0).len();
    let t0 = flow.times()[0];
    let horizon = flow.horizon();
    let h0 = flow.measure(0).h();
    let e_h0_sq = crate::numeric::neumaier_sum(h0.iter().map(|h| h * h)) / n as f64;
    let mut running = vec![0.0f64; n];
    let mut rows = Vec::with_capacity(flow.times().len());
    let (mut holds, mut s1, mut s2) = (true, f64::INFINITY, f64::INFINITY);
    let mean_bound = 2.0 * (0.5 * c22 * (horizon - t0)).exp() * e_h0_sq.sqrt();
    for (k, &t) in flow.times().iter().enumerate() {
        let hs = flow.measure(k).h();
        for i in 0..n {
            running[i] = running[i].max(hs[i] * hs[i]);
        }
        let (m1, se1) = mean_se(&running);
        let (m2, se2) = mean_se(hs);
        let b1 = 4.0 * (c22 * (t - t0)).exp() * e_h0_sq;
        let (d1, d2) = (b1 - (m1 - z * se1), mean_bound - (m2 - z * se2));
        holds &= d1 >= 0.0 && d2 >= 0.0;
        s1 = s1.min(d1);
        s2 = s2.min(d2);
        rows.push(MomentRow { t, sup_h2_mean: m1, sup_h2_se: se1, sup_h2_bound: b1, mean_h: m2, mean_h_se: se2, mean_h_bound: mean_bound });
    }
    MomentReport { rows, z, c22, holds, min_slack_sup_h2: s1, min_slack_mean_h: s2 }
}

/// Constant of the measure-perturbation estimate
/// `E sup |h_mu - h_nu|^2 <= C d_{inf,2}(mu, nu)^2`:
/// `24 T^2 (Theta/theta^2 (L1 + L2) P + Theta^2/theta^2)^2 E[h0^2]
/// exp(T C22 + 6 T L_f^2 Theta^2/theta^2 M^2 + 3 T zeta^2 + 3 chi^2)`,
/// with `P = max(sqrt P2)` over both flows and `M = M_bar(mu)`.
/// `literal_inverse` replaces `L2` by `1/L2` as in the source display.
pub fn perturbation_constant(params: &ModelParams, t: f64, p2_sqrt_max: f64, m_bar_mu: f64, c22_nu: f64, e_h0_sq: f64, literal_inverse: bool) -> f64 {
    let (th, big) = (params.theta_lo, params.theta_hi);
    let l2 = if literal_inverse { 1.0 / params.l_eta2() } else { params.l_eta2() };
    let inner = big / (th * th) * (params.l_eta1() + l2) * p2_sqrt_max + big * big / (th * th);
    let expo = t * c22_nu
        + 6.0 * t * params.l_f().powi(2) * big * big / (th * th) * m_bar_mu * m_bar_mu
        + 3.0 * t * params.zeta * params.zeta
        + 3.0 * params.chi * params.chi;
    24.0 * t * t * inner * inner * e_h0_sq * expo.exp()
}
