//! Empirical probability measures on `R x R+`, measure flows on uniform
//! time grids, moments, Wasserstein distances and the flow set `Q_{K1,K2}`.

mod transport;

pub use transport::{assignment_cost, wasserstein1, wasserstein2, EXACT_SUPPORT_CAP};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::Neumaier;
use crate::rng::NoiseKey;

/// Weighted atoms `(x_i, h_i)` with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    x: Vec<f64>,
    h: Vec<f64>,
    w: Vec<f64>,
    uniform: bool,
}

impl EmpiricalMeasure {
    pub fn new(x: Vec<f64>, h: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        if x.len() != h.len() || x.len() != w.len() {
            return Err(Error::InvalidMeasure(format!("length mismatch: {} x, {} h, {} w", x.len(), h.len(), w.len())));
        }
        if let Some(i) = h.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidMeasure(format!("atom {i} has h = {}", h[i])));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure(format!("atom {i} has x = {}", x[i])));
        }
        if let Some(i) = w.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidMeasure(format!("atom {i} has weight {}", w[i])));
        }
        let total: f64 = crate::numeric::neumaier_sum(w.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}")));
        }
        let uniform = w.iter().all(|&v| v == w[0]);
        Ok(Self { x, h, w, uniform })
    }

    /// Equal weights `1/n`.
    pub fn uniform(x: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        let n = x.len();
        let w = vec![1.0 / n.max(1) as f64; n];
        let mut m = Self::new(x, h, w)?;
        m.uniform = true;
        Ok(m)
    }

    pub fn dirac(x: f64, h: f64) -> Self {
        Self::uniform(vec![x], vec![h]).expect("valid Dirac")
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// True when every weight is identical.
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Moves every atom by `c` in `x`.
    pub fn shift(&self, c: f64) -> Self {
        Self { x: self.x.iter().map(|v| v + c).collect(), ..self.clone() }
    }

    /// Sub-measure on the given atom indices, weights renormalized.
    pub fn select(&self, idx: &[usize]) -> Self {
        let x: Vec<f64> = idx.iter().map(|&i| self.x[i]).collect();
        let h: Vec<f64> = idx.iter().map(|&i| self.h[i]).collect();
        if self.uniform {
            return Self::uniform(x, h).expect("sub-measure of a valid measure");
        }
        let raw: Vec<f64> = idx.iter().map(|&i| self.w[i]).collect();
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Self::uniform(x, h).expect("sub-measure of a valid measure");
        }
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let s: f64 = w.iter().sum();
        let mut m = Self { x, h, w, uniform: false };
        // Put any rounding residue on the heaviest atom.
        if let Some((k, _)) = m.w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
            m.w[k] += 1.0 - s;
        }
        m
    }
}

/// `M(mu) = sum w_i h_i`.
pub fn moment_m(mu: &EmpiricalMeasure) -> f64 {
    weighted_sum(mu, |_, h| h)
}

/// `M2(mu) = sum w_i h_i^2`.
pub fn moment_m2(mu: &EmpiricalMeasure) -> f64 {
    weighted_sum(mu, |_, h| h * h)
}

/// `P2(mu) = sum w_i (x_i^2 + h_i^2)`.
pub fn moment_p2(mu: &EmpiricalMeasure) -> f64 {
    weighted_sum(mu, |x, h| x * x + h * h)
}

fn weighted_sum(mu: &EmpiricalMeasure, g: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = Neumaier::new();
    for i in 0..mu.len() {
        acc.add(mu.w[i] * g(mu.x[i], mu.h[i]));
    }
    acc.value()
}

/// Measures at the nodes of a uniform time grid `0 = t_0 < ... < t_n = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    times: Vec<f64>,
    measures: Vec<EmpiricalMeasure>,
}

impl MeasureFlow {
    pub fn new(times: Vec<f64>, measures: Vec<EmpiricalMeasure>) -> Result<Self> {
        if times.len() < 2 || times.len() != measures.len() {
            return Err(Error::GridMismatch(format!("{} times for {} measures (need >= 2)", times.len(), measures.len())));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(Error::GridMismatch("times must increase".into()));
        }
        for (k, w) in times.windows(2).enumerate() {
            let d = w[1] - w[0];
            if !(d > 0.0) || (d - dt).abs() > 1e-9 * dt {
                return Err(Error::GridMismatch(format!("nonuniform spacing at index {k}")));
            }
        }
        Ok(Self { times, measures })
    }

    /// Grid `t_k = k T / n_steps`.
    pub fn time_grid(horizon: f64, n_steps: usize) -> Vec<f64> {
        (0..=n_steps).map(|k| if k == n_steps { horizon } else { horizon * k as f64 / n_steps as f64 }).collect()
    }

    /// The constant flow `mu(t) = mu` on `n_steps` steps of `[0, T]`.
    pub fn constant(mu: &EmpiricalMeasure, horizon: f64, n_steps: usize) -> Self {
        let times = Self::time_grid(horizon, n_steps);
        let measures = vec![mu.clone(); times.len()];
        Self { times, measures }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measures(&self) -> &[EmpiricalMeasure] {
        &self.measures
    }

    pub fn measure(&self, k: usize) -> &EmpiricalMeasure {
        &self.measures[k]
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn dt(&self) -> f64 {
        (self.horizon() - self.times[0]) / self.n_steps() as f64
    }

    /// Index of the grid node at or left of `t` (clamped to the grid).
    pub fn index_at(&self, t: f64) -> usize {
        let s = ((t - self.times[0]) / self.dt() * (1.0 + 1e-12)).floor();
        if s.is_nan() || s <= 0.0 {
            0
        } else {
            (s as usize).min(self.n_steps())
        }
    }

    pub fn measure_at(&self, t: f64) -> &EmpiricalMeasure {
        &self.measures[self.index_at(t)]
    }

    /// Every `stride`-th grid time; `n_steps` must be divisible by `stride`.
    pub fn coarsen(&self, stride: usize) -> Result<Self> {
        if stride == 0 || !self.n_steps().is_multiple_of(stride) {
            return Err(Error::GridMismatch(format!("cannot coarsen {} steps by {stride}", self.n_steps())));
        }
        let times = self.times.iter().step_by(stride).copied().collect();
        let measures = self.measures.iter().step_by(stride).cloned().collect();
        Self::new(times, measures)
    }

    fn same_grid(&self, other: &MeasureFlow) -> bool {
        self.times.len() == other.times.len() && self.times.iter().zip(&other.times).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0))
    }
}

/// Subsampling rule for distances between measures that exceed the exact
/// solver's support cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtOptions {
    /// Atoms kept per measure when subsampling.
    pub max_atoms: usize,
    pub seed: u64,
}

impl Default for OtOptions {
    fn default() -> Self {
        Self { max_atoms: EXACT_SUPPORT_CAP / 2, seed: 0 }
    }
}

/// Stratified index sample: atoms sorted by `key` (ties by index), split into
/// `k` equal strata, one seeded pick per stratum.
pub fn stratified_indices(key: &[f64], k: usize, seed: u64, label: u64) -> Vec<usize> {
    let n = key.len();
    if k >= n {
        return (0..n).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    let noise = NoiseKey::new(seed, "stratified-subsample");
    (0..k)
        .map(|j| {
            let lo = j * n / k;
            let hi = (j + 1) * n / k;
            let u = noise.uniform(label, j as u64);
            let off = ((u * (hi - lo) as f64) as usize).min(hi - lo - 1);
            order[lo + off]
        })
        .collect()
}

/// Reduces a pair of measures to at most `opts.max_atoms` atoms each. Equal
/// atom counts share one index set (stratified by the paired mean capital),
/// which keeps particle-indexed couplings intact.
fn subsample_pair(a: &EmpiricalMeasure, b: &EmpiricalMeasure, opts: &OtOptions, label: u64) -> (EmpiricalMeasure, EmpiricalMeasure) {
    if a.len() + b.len() <= EXACT_SUPPORT_CAP {
        return (a.clone(), b.clone());
    }
    let k = opts.max_atoms.min(EXACT_SUPPORT_CAP / 2);
    if a.len() == b.len() {
        let key: Vec<f64> = a.h.iter().zip(&b.h).map(|(p, q)| 0.5 * (p + q)).collect();
        let idx = stratified_indices(&key, k, opts.seed, label);
        (a.select(&idx), b.select(&idx))
    } else {
        let ia = stratified_indices(&a.h, k, opts.seed, 2 * label);
        let ib = stratified_indices(&b.h, k, opts.seed, 2 * label + 1);
        (a.select(&ia), b.select(&ib))
    }
}

/// `d_{inf,2}`: max over grid times of `W2`, with explicit subsampling of
/// measures too large for the exact solver.
pub fn flow_distance_with(a: &MeasureFlow, b: &MeasureFlow, opts: &OtOptions) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch("flows live on different time grids".into()));
    }
    let d: Result<Vec<f64>> = (0..a.times.len())
        .into_par_iter()
        .map(|k| {
            let (p, q) = subsample_pair(&a.measures[k], &b.measures[k], opts, k as u64);
            wasserstein2(&p, &q)
        })
        .collect();
    Ok(d?.into_iter().fold(0.0, f64::max))
}

pub fn flow_distance(a: &MeasureFlow, b: &MeasureFlow) -> Result<f64> {
    flow_distance_with(a, b, &OtOptions::default())
}

/// Hölder seminorm value together with the maximizing pair of times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderValue {
    pub value: f64,
    pub witness: (f64, f64),
}

/// `max_{s != t} W2(mu(s), mu(t)) / |s - t|^{1/2}` over grid times. Large
/// flows with equal atom counts use one shared stratified index set.
pub fn holder_seminorm_with(flow: &MeasureFlow, opts: &OtOptions) -> Result<HolderValue> {
    let n = flow.times.len();
    let too_big = flow.measures.iter().any(|m| 2 * m.len() > EXACT_SUPPORT_CAP);
    let reduced: Vec<EmpiricalMeasure> = if !too_big {
        flow.measures.clone()
    } else {
        let k = opts.max_atoms.min(EXACT_SUPPORT_CAP / 2);
        let len = flow.measures[0].len();
        if flow.measures.iter().all(|m| m.len() == len) {
            let mut key = vec![0.0; len];
            for m in &flow.measures {
                for (s, h) in key.iter_mut().zip(&m.h) {
                    *s += h;
                }
            }
            let idx = stratified_indices(&key, k, opts.seed, u64::MAX);
            flow.measures.iter().map(|m| m.select(&idx)).collect()
        } else {
            flow.measures.iter().enumerate().map(|(j, m)| m.select(&stratified_indices(&m.h, k, opts.seed, j as u64))).collect()
        }
    };
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let vals: Result<Vec<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d = wasserstein2(&reduced[i], &reduced[j])?;
            Ok(d / (flow.times[j] - flow.times[i]).sqrt())
        })
        .collect();
    let vals = vals?;
    let mut best = HolderValue { value: 0.0, witness: (flow.times[0], flow.times[0]) };
    for (v, &(i, j)) in vals.iter().zip(&pairs) {
        if *v > best.value {
            best = HolderValue { value: *v, witness: (flow.times[i], flow.times[j]) };
        }
    }
    Ok(best)
}

pub fn holder_seminorm(flow: &MeasureFlow) -> Result<f64> {
    Ok(holder_seminorm_with(flow, &OtOptions::default())?.value)
}

/// Membership report for `Q_{K1,K2}`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct QReport {
    pub p2_ok: bool,
    pub holder_ok: bool,
    pub initial_ok: bool,
    pub sup_p2: f64,
    pub sup_p2_time: f64,
    pub holder: f64,
    pub holder_witness: (f64, f64),
}

impl QReport {
    pub fn all_ok(&self) -> bool {
        self.p2_ok && self.holder_ok && self.initial_ok
    }
}

/// Checks `sup_t P2 <= 2 K1`, Hölder seminorm `<= K2` and `mu(0) = mu0`.
pub fn q_membership(flow: &MeasureFlow, mu0: &EmpiricalMeasure, k1: f64, k2: f64, opts: &OtOptions) -> Result<QReport> {
    let mut sup_p2 = f64::NEG_INFINITY;
    let mut sup_p2_time = 0.0;
    for (t, m) in flow.times.iter().zip(&flow.measures) {
        let p2 = moment_p2(m);
        if p2 > sup_p2 {
            sup_p2 = p2;
            sup_p2_time = *t;
        }
    }
    let hv = holder_seminorm_with(flow, opts)?;
    Ok(QReport {
        p2_ok: sup_p2 <= 2.0 * k1,
        holder_ok: hv.value <= k2,
        initial_ok: flow.measures[0] == *mu0,
        sup_p2,
        sup_p2_time,
        holder: hv.value,
        holder_witness: hv.witness,
    })
}
