//! Control rules `(t, x, h) -> (v, s)`.

use crate::error::{Error, Result};
use crate::hamiltonian::Hamiltonian;
use crate::measures::MeasureFlow;
use crate::params::ModelParams;

use super::ValueField;

/// A Markov control rule. `big_f` is `F(x, mu(t))` at the current state,
/// supplied by the simulator so feedback rules need not recompute it.
pub trait Policy: Sync {
    fn control(&self, t: f64, x: f64, h: f64, big_f: f64) -> (f64, f64);
}

/// `(v, s)` held fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy {
    pub v: f64,
    pub s: f64,
}

impl Policy for ConstantPolicy {
    fn control(&self, _t: f64, _x: f64, _h: f64, _big_f: f64) -> (f64, f64) {
        (self.v, self.s)
    }
}

/// Piecewise-constant in time: `controls[i]` applies on `[breaks[i], breaks[i+1])`
/// and the last piece extends to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantPolicy {
    pub breaks: Vec<f64>,
    pub controls: Vec<(f64, f64)>,
}

impl Policy for PiecewiseConstantPolicy {
    fn control(&self, t: f64, _x: f64, _h: f64, _big_f: f64) -> (f64, f64) {
        let piece = self.breaks.iter().rposition(|&b| t >= b).unwrap_or(0);
        self.controls[piece.min(self.controls.len() - 1)]
    }
}

/// `(v*, s*) = (D_p H0(D_x V), s_bar(x, h, mu(t), D_h V))`.
#[derive(Debug, Clone)]
pub struct FeedbackPolicy<'a> {
    pub field: &'a ValueField,
    pub ham: Hamiltonian,
}

impl Policy for FeedbackPolicy<'_> {
    fn control(&self, t: f64, x: f64, h: f64, big_f: f64) -> (f64, f64) {
        let g = self.field.gradients(t, x, h);
        let v = self.ham.dp_h0(g.dx_v);
        let s = if h > 0.0 { self.ham.s_bar(&self.ham.site(x, h, big_f), g.dh_v) } else { 0.0 };
        (v, s)
    }
}

/// The feedback rule read off `field`; `mu_flow` must share its time grid.
pub fn feedback_policy<'a>(field: &'a ValueField, mu_flow: &MeasureFlow, params: &ModelParams) -> Result<FeedbackPolicy<'a>> {
    let a = &field.grid.times;
    let b = mu_flow.times();
    if a.len() != b.len() || a.iter().zip(b).any(|(p, q)| (p - q).abs() > 1e-12 * p.abs().max(1.0)) {
        return Err(Error::GridMismatch("value field and measure flow use different time grids".into()));
    }
    Ok(FeedbackPolicy { field, ham: Hamiltonian::new(params) })
}
