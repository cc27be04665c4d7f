//! The fixed-point map `Psi` (HJB against a flow, then the particle system
//! under the resulting feedback) and its damped iteration.
//!
//! Iteration: `mu_1 = Psi(mu^0)` from the constant flow `mu^0 = mu0`; then for
//! `k >= 1` the residual `r_k = d(Psi(mu_k), mu_k)` is measured and the
//! iteration stops with `(mu_k, V_k)` once `r_k <= tol_fp`, otherwise
//! `mu_{k+1} = mix(lambda, Psi(mu_k), mu_k)`. Stopping on the residual makes
//! the returned pair satisfy the self-map criterion directly.

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{flow_diagnostics, horizon_constants, simulate_mkv, FlowDiagnostics, HorizonConstants, MkvRun, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::hjb::{feedback_policy, mc_path_values, solve_hjb, ConstantPolicy, McEstimate, McOptions, PiecewiseConstantPolicy, Policy, ValueField};
use crate::interaction::FTable;
use crate::measures::{flow_distance_with, q_membership, EmpiricalMeasure, MeasureFlow, OtOptions, QReport};
use crate::numeric::linspace;
use crate::params::{GridSpec, ModelParams, NumericsParams};
use crate::rng::{derive_seed, unit_f64, NoiseKey};

/// One evaluation of `Psi`.
#[derive(Debug, Clone)]
pub struct PsiOutput {
    pub flow: MeasureFlow,
    pub value: ValueField,
    pub mkv: MkvRun,
}

/// `Psi(mu_flow)`: value field against `mu_flow`, then the particle system
/// started from `mu0` under its feedback. The particle noise depends only on
/// `numerics.seed`, so repeated calls share random numbers.
pub fn psi_map(mu_flow: &MeasureFlow, mu0: &EmpiricalMeasure, params: &ModelParams, numerics: &NumericsParams) -> Result<PsiOutput> {
    let value = solve_hjb(mu_flow, params, &numerics.grid)?;
    let ens = ParticleEnsemble::from_measure(mu0, mu_flow.times()[0])?;
    let mkv = simulate_mkv(&ens, &value, params, derive_seed(numerics.seed, "mkv"))?;
    Ok(PsiOutput { flow: mkv.flow.clone(), value, mkv })
}

/// Measure-level damping on particle-aligned flows: atom `i` of the result
/// follows `a` with probability `lambda` and `b` otherwise, one draw per atom
/// for the whole path. This is a seeded resampling of the weighted union
/// `lambda a + (1 - lambda) b` that keeps every atom's path continuous.
pub fn mix(lambda: f64, a: &MeasureFlow, b: &MeasureFlow, seed: u64, round: u64) -> Result<MeasureFlow> {
    let n = a.measure(0).len();
    if b.measure(0).len() != n || a.times().len() != b.times().len() {
        return Err(Error::GridMismatch("mixed flows must share grid and atom count".into()));
    }
    let key = NoiseKey::new(seed, "mix");
    let pick: Vec<bool> = (0..n as u64).map(|i| key.uniform(i, round) < lambda).collect();
    let measures = a
        .measures()
        .iter()
        .zip(b.measures())
        .map(|(ma, mb)| {
            let x = (0..n).map(|i| if pick[i] { ma.x()[i] } else { mb.x()[i] }).collect();
            let h = (0..n).map(|i| if pick[i] { ma.h()[i] } else { mb.h()[i] }).collect();
            EmpiricalMeasure::uniform(x, h)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(a.times().to_vec(), measures)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    NotConverged,
}

/// Record of one iterate `mu_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `d_{inf,2}(Psi(mu_k), mu_k)`.
    pub residual: f64,
    /// `d_{inf,2}(mu_{k+1}, mu_k)` when a next iterate was formed.
    pub step: Option<f64>,
    pub q: QReport,
    pub traces: Vec<FlowDiagnostics>,
    pub hjb_positivity_violations: usize,
    pub hjb_monotonicity_violations: usize,
    pub weighted_gradient_bound: f64,
    pub clamped_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub verdict: Verdict,
    pub iterations: usize,
    pub tol_fp: f64,
    pub damping: f64,
    pub horizon: f64,
    pub constants: HorizonConstants,
    pub records: Vec<IterationRecord>,
    pub exploitability: Option<ExploitabilityReport>,
}

impl FixedPointReport {
    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }

    pub fn steps(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.step).collect()
    }

    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.residual)
    }
}

#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub flow: MeasureFlow,
    pub value: ValueField,
    pub report: FixedPointReport,
}

pub fn ot_options(numerics: &NumericsParams) -> OtOptions {
    OtOptions { max_atoms: numerics.ot_atoms, seed: derive_seed(numerics.seed, "ot") }
}

pub fn holder_options(numerics: &NumericsParams) -> OtOptions {
    OtOptions { max_atoms: numerics.holder_atoms, seed: derive_seed(numerics.seed, "holder") }
}

/// Refuses horizons beyond `T_max` of `mu0`.
pub fn horizon_guard(mu0: &EmpiricalMeasure, params: &ModelParams) -> Result<HorizonConstants> {
    let hc = horizon_constants(mu0, params);
    if params.horizon > hc.t_max {
        return Err(Error::Horizon { horizon: params.horizon, t_max: hc.t_max });
    }
    Ok(hc)
}

/// Damped fixed-point iteration from the constant flow `mu0`.
pub fn solve_mfg(mu0: &EmpiricalMeasure, params: &ModelParams, numerics: &NumericsParams) -> Result<MfgSolution> {
    let hc = horizon_guard(mu0, params)?;
    let ot = ot_options(numerics);
    let hold = holder_options(numerics);
    let start = MeasureFlow::constant(mu0, params.horizon, numerics.n_time);
    let first = psi_map(&start, mu0, params, numerics)?;
    let mut current = first.flow;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut verdict = Verdict::NotConverged;
    let mut value = first.value;
    for k in 1..=numerics.max_iter {
        let out = psi_map(&current, mu0, params, numerics)?;
        let residual = flow_distance_with(&out.flow, &current, &ot)?;
        let q = q_membership(&current, mu0, hc.k1, hc.k2, &hold)?;
        info!("iteration {k}: residual {residual:.6e}, Q membership {}", q.all_ok());
        records.push(IterationRecord {
            iteration: k,
            residual,
            step: None,
            q,
            traces: flow_diagnostics(&current),
            hjb_positivity_violations: out.value.meta.positivity_violations,
            hjb_monotonicity_violations: out.value.meta.monotonicity_violations,
            weighted_gradient_bound: out.value.meta.weighted_gradient_bound,
            clamped_queries: out.mkv.clamped_queries,
        });
        value = out.value;
        if residual <= numerics.tol_fp {
            verdict = Verdict::Converged;
            break;
        }
        if k == numerics.max_iter {
            break;
        }
        let next = mix(numerics.damping, &out.flow, &current, numerics.seed, k as u64)?;
        let step = flow_distance_with(&next, &current, &ot)?;
        records.last_mut().expect("record pushed").step = Some(step);
        current = next;
    }
    let iterations = records.len();
    let report = FixedPointReport {
        verdict,
        iterations,
        tol_fp: numerics.tol_fp,
        damping: numerics.damping,
        horizon: params.horizon,
        constants: hc,
        records,
        exploitability: None,
    };
    Ok(MfgSolution { flow: current, value, report })
}

/// Readout of the residual sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub verdict: Verdict,
    pub iterations: usize,
    /// Least-squares geometric ratio of the positive residuals; `None` with
    /// fewer than two positive residuals.
    pub rate: Option<f64>,
    pub monotone: bool,
    pub decreases: usize,
    pub q_all_ok: bool,
}

pub fn convergence_diagnostics(report: &FixedPointReport) -> ConvergenceSummary {
    let r = report.residuals();
    let pts: Vec<(f64, f64)> = r.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, v)| (i as f64, v.ln())).collect();
    let rate = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        Some((sxy / sxx).exp())
    } else {
        None
    };
    ConvergenceSummary {
        verdict: report.verdict,
        iterations: report.iterations,
        rate,
        monotone: r.windows(2).all(|w| w[1] <= w[0]),
        decreases: r.windows(2).filter(|w| w[1] < w[0]).count(),
        q_all_ok: report.records.iter().all(|rec| rec.q.all_ok()),
    }
}

/// Settings of the exploitability test.
#[derive(Debug, Clone, PartialEq)]
pub struct ExploitabilityOptions {
    /// Start points `(x0, h0)` at `t0 = 0`.
    pub probes: Vec<(f64, f64)>,
    pub mc: McOptions,
    pub n_random: usize,
    pub pieces: usize,
}

impl ExploitabilityOptions {
    pub fn from_numerics(numerics: &NumericsParams, probes: Vec<(f64, f64)>) -> Self {
        Self {
            probes,
            mc: McOptions { paths: numerics.mc_paths, substeps: numerics.mc_substeps, seed: derive_seed(numerics.seed, "exploitability") },
            n_random: 16,
            pieces: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeOutcome {
    pub x0: f64,
    pub h0: f64,
    pub feedback: McEstimate,
    pub best_challenger: String,
    /// `J(best) - J(feedback)`.
    pub gap: f64,
    /// Standard error of the paired difference for the best challenger.
    pub gap_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExploitabilityReport {
    pub probes: Vec<ProbeOutcome>,
    pub gap: f64,
    pub gap_std_error: f64,
    pub challengers: usize,
}

impl ExploitabilityReport {
    /// Gap within `z` paired standard errors plus `c_disc`.
    pub fn within(&self, z: f64, c_disc: f64) -> bool {
        self.probes.iter().all(|p| p.gap <= z * p.gap_std_error + c_disc)
    }
}

/// Named challenger policies: the 8 x 5 grid of constant controls and
/// `n_random` seeded piecewise-constant ones.
pub fn challenger_policies(params: &ModelParams, horizon: f64, n_random: usize, pieces: usize, seed: u64) -> Vec<(String, Box<dyn Policy>)> {
    let mut out: Vec<(String, Box<dyn Policy>)> = Vec::new();
    let cb = params.control_box;
    for v in linspace(cb.v_lo, cb.v_hi, 8) {
        for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
            out.push((format!("constant(v={v:.4},s={s})"), Box::new(ConstantPolicy { v, s })));
        }
    }
    let key = NoiseKey::new(seed, "random-policies");
    for r in 0..n_random {
        let mut rng = key.generator(r as u64, 0);
        let breaks = (0..pieces).map(|i| horizon * i as f64 / pieces as f64).collect();
        let controls = (0..pieces)
            .map(|_| {
                let v = cb.v_lo + (cb.v_hi - cb.v_lo) * unit_f64(&mut rng);
                (v, unit_f64(&mut rng))
            })
            .collect();
        out.push((format!("random-{r}"), Box::new(PiecewiseConstantPolicy { breaks, controls })));
    }
    out
}

/// Largest gain of a challenger over the feedback policy of `value` at each
/// probe, with paired standard errors (all policies share noise).
pub fn exploitability(mu_flow: &MeasureFlow, value: &ValueField, params: &ModelParams, opts: &ExploitabilityOptions) -> Result<ExploitabilityReport> {
    let fb = feedback_policy(value, mu_flow, params)?;
    let table = FTable::covering(params, mu_flow, 0.5, 1025);
    let challengers = challenger_policies(params, mu_flow.horizon(), opts.n_random, opts.pieces, opts.mc.seed);
    let mut probes = Vec::new();
    for &(x0, h0) in &opts.probes {
        let base = mc_path_values(0, x0, h0, mu_flow, &table, &fb, params, &opts.mc)?;
        let results: Vec<(String, f64, f64)> = challengers
            .par_iter()
            .map(|(name, pol)| {
                let vals = mc_path_values(0, x0, h0, mu_flow, &table, pol.as_ref(), params, &opts.mc)?;
                let diffs: Vec<f64> = vals.iter().zip(&base).map(|(a, b)| a - b).collect();
                let e = McEstimate::from_samples(&diffs);
                Ok((name.clone(), e.mean, e.std_error))
            })
            .collect::<Result<Vec<_>>>()?;
        // The feedback policy itself is a challenger with gap exactly 0.
        let mut best = ("feedback".to_string(), 0.0, 0.0);
        for r in results {
            if r.1 > best.1 {
                best = r;
            }
        }
        probes.push(ProbeOutcome { x0, h0, feedback: McEstimate::from_samples(&base), best_challenger: best.0, gap: best.1, gap_std_error: best.2 });
    }
    let worst = probes.iter().max_by(|a, b| a.gap.total_cmp(&b.gap)).expect("at least one probe");
    Ok(ExploitabilityReport { gap: worst.gap, gap_std_error: worst.gap_std_error, challengers: challengers.len() + 1, probes })
}

/// Grid specification with every axis at half resolution (`n -> (n+1)/2`).
pub fn half_grid(spec: &GridSpec) -> GridSpec {
    GridSpec { n_x: spec.n_x.div_ceil(2), n_y: spec.n_y.div_ceil(2), ..*spec }
}

/// `max |V_full - V_half|` over probes at `t = 0`, where `V_half` is solved on
/// the half-resolution grid against every other time of `mu_flow`.
pub fn discretization_gap(mu_flow: &MeasureFlow, value: &ValueField, params: &ModelParams, spec: &GridSpec, probes: &[(f64, f64)]) -> Result<f64> {
    let coarse = solve_hjb(&mu_flow.coarsen(2)?, params, &half_grid(spec))?;
    let t0 = mu_flow.times()[0];
    Ok(probes.iter().map(|&(x, h)| (value.value(t0, x, h) - coarse.value(t0, x, h)).abs()).fold(0.0, f64::max))
}
