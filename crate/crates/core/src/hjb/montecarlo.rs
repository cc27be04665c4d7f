//! Monte Carlo evaluation of the objective under a given policy.
//!
//! `J = E int_{t0}^T e^{-rho (t - t0)} (U(x, h, s, mu(t)) - a(v)) dt`, integrated
//! with the trapezoidal rule on the fine grid of the controlled simulation.
//! Path `i` always uses noise stream `i`, so estimates for different
//! policies share their random numbers.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{ControlledContext, ControlledOptions};
use crate::error::Result;
use crate::interaction::FTable;
use crate::measures::MeasureFlow;
use crate::params::ModelParams;

use super::Policy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub paths: usize,
    pub substeps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
}

impl McEstimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = crate::numeric::neumaier_sum(v.iter().copied()) / n;
        let std_error = if v.len() > 1 { (crate::numeric::neumaier_sum(v.iter().map(|a| (a - mean) * (a - mean))) / (n - 1.0) / n).sqrt() } else { 0.0 };
        Self { mean, std_error, paths: v.len() }
    }
}

/// Discounted reward of every path started at `(x0, h0)` at flow index `t0_index`.
#[allow(clippy::too_many_arguments)]
pub fn mc_path_values<P: Policy + ?Sized>(
    t0_index: usize,
    x0: f64,
    h0: f64,
    mu_flow: &MeasureFlow,
    table: &FTable,
    policy: &P,
    params: &ModelParams,
    opts: &McOptions,
) -> Result<Vec<f64>> {
    let copts = ControlledOptions { substeps: opts.substeps, seed: opts.seed, t0_index };
    let ctx = ControlledContext::new(mu_flow, table, params, &copts)?;
    let dt = ctx.fine_dt();
    let (j0, j1) = (ctx.first_step(), ctx.last_step());
    let t0 = ctx.time(j0);
    let rho = params.rho;
    (0..opts.paths)
        .into_par_iter()
        .map(|p| {
            let mut acc = 0.0;
            ctx.run(policy, p as u64, x0, h0, |j, t, x, h, v, s, big_f| {
                let site = ctx.ham.site(x, h, big_f);
                let r = ctx.ham.utility(&site, s) - ctx.ham.cost.eval(v);
                let weight = if j == j0 || j == j1 { 0.5 } else { 1.0 };
                acc += weight * dt * (-rho * (t - t0)).exp() * r;
            })?;
            Ok(acc)
        })
        .collect()
}

/// Estimate and standard error of `J(t0, x0, h0)` under `policy`, where
/// `t0` is the flow time with index `t0_index`.
#[allow(clippy::too_many_arguments)]
pub fn mc_value<P: Policy + ?Sized>(
    t0_index: usize,
    x0: f64,
    h0: f64,
    mu_flow: &MeasureFlow,
    table: &FTable,
    policy: &P,
    params: &ModelParams,
    opts: &McOptions,
) -> Result<McEstimate> {
    Ok(McEstimate::from_samples(&mc_path_values(t0_index, x0, h0, mu_flow, table, policy, params, opts)?))
}
