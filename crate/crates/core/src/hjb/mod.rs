//! Backward HJB solve on the log-capital grid.
//!
//! The unknown is `w(t, x, y) = V(t, x, e^y)`. One backward step from
//! `t_{n+1}` to `t_n` applies the upwinded Hamiltonian explicitly, then the
//! `x` diffusion together with the discount implicitly along `x`-lines, then
//! the `y` diffusion implicitly along `y`-lines.
//!
//! Boundaries: homogeneous Neumann at both `x` ends and at `y_max`,
//! `w = 0` at `y_min`.

pub mod montecarlo;
pub mod policy;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{Hamiltonian, Site};
use crate::interaction::KernelPair;
use crate::measures::MeasureFlow;
use crate::numeric::{linspace, locate_uniform, solve_tridiagonal};
use crate::params::{GridSpec, ModelParams};

pub use montecarlo::{mc_path_values, mc_value, McEstimate, McOptions};
pub use policy::{feedback_policy, ConstantPolicy, FeedbackPolicy, PiecewiseConstantPolicy, Policy};

/// Largest admissible explicit CFL number.
pub const CFL_LIMIT: f64 = 0.9;

/// Space-time grid of a value field.
#[derive(Debug, Clone, PartialEq)]
pub struct HjbGrid {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl HjbGrid {
    pub fn new(times: &[f64], spec: &GridSpec) -> Self {
        Self { times: times.to_vec(), xs: linspace(spec.x_min, spec.x_max, spec.n_x), ys: linspace(spec.y_min, spec.y_max, spec.n_y) }
    }

    pub fn n_t(&self) -> usize {
        self.times.len()
    }

    pub fn n_x(&self) -> usize {
        self.xs.len()
    }

    pub fn n_y(&self) -> usize {
        self.ys.len()
    }

    pub fn dt(&self) -> f64 {
        (self.times[self.n_t() - 1] - self.times[0]) / (self.n_t() - 1) as f64
    }

    pub fn dx(&self) -> f64 {
        (self.xs[self.n_x() - 1] - self.xs[0]) / (self.n_x() - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.ys[self.n_y() - 1] - self.ys[0]) / (self.n_y() - 1) as f64
    }

    fn slice_len(&self) -> usize {
        self.n_x() * self.n_y()
    }
}

/// Scheme description and structural diagnostics of a solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjbMeta {
    pub scheme: String,
    pub dimension_split: bool,
    pub cfl_number: f64,
    /// Nodes with `w < 0` over all time slices.
    pub positivity_violations: usize,
    /// Pairs with `w(y_{j+1}) < w(y_j)` over all time slices.
    pub monotonicity_violations: usize,
    /// `max |D_x V| + |h D_h V|` over the grid.
    pub weighted_gradient_bound: f64,
}

/// Interpolated gradients; `clamped` reports a query outside the grid hull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    pub dx_v: f64,
    pub dh_v: f64,
    pub clamped: bool,
}

/// `w` and its difference-quotient gradients on `(t, x, y)` nodes, stored
/// time-major, then `x`, then `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: HjbGrid,
    w: Vec<f64>,
    dx_w: Vec<f64>,
    dy_w: Vec<f64>,
    pub meta: HjbMeta,
}

impl ValueField {
    /// Builds a field from raw slices and computes gradients and diagnostics.
    pub fn from_values(grid: HjbGrid, w: Vec<f64>, scheme: &str, cfl_number: f64) -> Result<Self> {
        if w.len() != grid.n_t() * grid.slice_len() {
            return Err(Error::GridMismatch(format!("{} values for a {}x{}x{} grid", w.len(), grid.n_t(), grid.n_x(), grid.n_y())));
        }
        let (dx_w, dy_w) = difference_quotients(&grid, &w);
        let mut field = Self {
            grid,
            w,
            dx_w,
            dy_w,
            meta: HjbMeta {
                scheme: scheme.to_string(),
                dimension_split: true,
                cfl_number,
                positivity_violations: 0,
                monotonicity_violations: 0,
                weighted_gradient_bound: 0.0,
            },
        };
        field.refresh_diagnostics();
        Ok(field)
    }

    /// The identically zero field.
    pub fn zero(grid: HjbGrid) -> Self {
        let n = grid.n_t() * grid.slice_len();
        Self::from_values(grid, vec![0.0; n], "zero", 0.0).expect("sizes match")
    }

    fn refresh_diagnostics(&mut self) {
        let ny = self.grid.n_y();
        self.meta.positivity_violations = self.w.iter().filter(|&&v| v < 0.0).count();
        self.meta.monotonicity_violations = self.w.chunks(ny).map(|line| line.windows(2).filter(|p| p[1] < p[0]).count()).sum();
        self.meta.weighted_gradient_bound = self.dx_w.iter().zip(&self.dy_w).map(|(a, b)| a.abs() + b.abs()).fold(0.0, f64::max);
    }

    #[inline]
    fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.grid.n_x() + i) * self.grid.n_y() + j
    }

    pub fn w_at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.w[self.idx(k, i, j)]
    }

    pub fn dx_w_at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.dx_w[self.idx(k, i, j)]
    }

    pub fn dy_w_at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.dy_w[self.idx(k, i, j)]
    }

    /// The `(x, y)` slice of `w` at time index `k`.
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.slice_len();
        &self.w[k * n..(k + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    /// Adds `delta` to `w` at every node with `y >= y_from`, for every time
    /// but the last, then recomputes gradients. Used for negative controls.
    pub fn perturbed(&self, y_from: f64, delta: f64) -> Self {
        let mut w = self.w.clone();
        let (nt, nx, ny) = (self.grid.n_t(), self.grid.n_x(), self.grid.n_y());
        for k in 0..nt - 1 {
            for i in 0..nx {
                for j in 0..ny {
                    if self.grid.ys[j] >= y_from {
                        w[(k * nx + i) * ny + j] += delta;
                    }
                }
            }
        }
        let mut out = Self::from_values(self.grid.clone(), w, &self.meta.scheme, self.meta.cfl_number).expect("sizes match");
        out.meta.dimension_split = self.meta.dimension_split;
        out
    }

    /// Locates `(t, x, y)`: returns the corner indices, fractions and a clamp flag.
    #[inline]
    fn locate(&self, t: f64, x: f64, y: f64) -> ([usize; 3], [f64; 3], bool) {
        let g = &self.grid;
        let (kt, ft, _) = locate_uniform(t, g.times[0], g.dt(), g.n_t());
        let (ix, fx, cx) = locate_uniform(x, g.xs[0], g.dx(), g.n_x());
        let (jy, fy, cy) = locate_uniform(y, g.ys[0], g.dy(), g.n_y());
        ([kt, ix, jy], [ft, fx, fy], cx || cy)
    }

    #[inline]
    fn trilinear(&self, data: &[f64], c: [usize; 3], f: [f64; 3]) -> f64 {
        let mut acc = 0.0;
        for dk in 0..2 {
            let wk = if dk == 0 { 1.0 - f[0] } else { f[0] };
            if wk == 0.0 {
                continue;
            }
            for di in 0..2 {
                let wi = if di == 0 { 1.0 - f[1] } else { f[1] };
                if wi == 0.0 {
                    continue;
                }
                for dj in 0..2 {
                    let wj = if dj == 0 { 1.0 - f[2] } else { f[2] };
                    if wj == 0.0 {
                        continue;
                    }
                    acc += wk * wi * wj * data[self.idx(c[0] + dk, c[1] + di, c[2] + dj)];
                }
            }
        }
        acc
    }

    /// `V(t, x, h)` by trilinear interpolation of `w`; `V(t, x, 0) = 0`.
    pub fn value(&self, t: f64, x: f64, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        let (c, f, _) = self.locate(t, x, h.ln());
        self.trilinear(&self.w, c, f)
    }

    /// `(D_x V, D_h V)` at `(t, x, h)` from the stored difference quotients,
    /// with `D_h V = e^{-y} D_y w`. Zero capital gives `(0, 0)`.
    pub fn gradients(&self, t: f64, x: f64, h: f64) -> Gradient {
        if h <= 0.0 {
            return Gradient { dx_v: 0.0, dh_v: 0.0, clamped: false };
        }
        let y = h.ln();
        let (c, f, clamped) = self.locate(t, x, y);
        let dx_v = self.trilinear(&self.dx_w, c, f);
        let dy = self.trilinear(&self.dy_w, c, f);
        Gradient { dx_v, dh_v: dy / h, clamped }
    }

    /// Same as [`gradients`](Self::gradients) at the time node `k`.
    pub fn gradients_at_step(&self, k: usize, x: f64, h: f64) -> Gradient {
        if h <= 0.0 {
            return Gradient { dx_v: 0.0, dh_v: 0.0, clamped: false };
        }
        let g = &self.grid;
        let (ix, fx, cx) = locate_uniform(x, g.xs[0], g.dx(), g.n_x());
        let (jy, fy, cy) = locate_uniform(h.ln(), g.ys[0], g.dy(), g.n_y());
        let (kt, ft) = if k + 1 < g.n_t() { (k, 0.0) } else { (k - 1, 1.0) };
        let c = [kt, ix, jy];
        let f = [ft, fx, fy];
        Gradient { dx_v: self.trilinear(&self.dx_w, c, f), dh_v: self.trilinear(&self.dy_w, c, f) / h, clamped: cx || cy }
    }
}

/// Central differences in the interior; zero normal derivative at the
/// Neumann ends; one-sided at `y_min`.
fn difference_quotients(grid: &HjbGrid, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (nt, nx, ny) = (grid.n_t(), grid.n_x(), grid.n_y());
    let (dx, dy) = (grid.dx(), grid.dy());
    let mut gx = vec![0.0; w.len()];
    let mut gy = vec![0.0; w.len()];
    for k in 0..nt {
        for i in 0..nx {
            for j in 0..ny {
                let at = |ii: usize, jj: usize| w[(k * nx + ii) * ny + jj];
                let n = (k * nx + i) * ny + j;
                gx[n] = if i == 0 || i + 1 == nx { 0.0 } else { (at(i + 1, j) - at(i - 1, j)) / (2.0 * dx) };
                gy[n] = if j == 0 {
                    (at(i, 1) - at(i, 0)) / dy
                } else if j + 1 == ny {
                    0.0
                } else {
                    (at(i, j + 1) - at(i, j - 1)) / (2.0 * dy)
                };
            }
        }
    }
    (gx, gy)
}

/// Upwinded numerical Hamiltonian at one node.
///
/// The `y`-transport speed of a saving fraction `s` is
/// `B1(s) = s a / h - zeta - chi^2/2`; fractions with `B1 >= 0` see the
/// forward difference and the others the backward one. The capital part is
/// `max(sup_{s >= s_c} [B1 D+ + U], sup_{s <= s_c} [B1 D- + U])` and the
/// velocity part `max(sup_{v >= 0} [v D+ - a(v)], sup_{v <= 0} [v D- - a(v)])`.
#[derive(Debug, Clone, Copy)]
pub struct NodeHamiltonian {
    pub value: f64,
    pub v: f64,
    pub s: f64,
    /// The `y`-speed of the selected saving fraction.
    pub b1: f64,
}

#[inline]
pub fn numerical_hamiltonian(ham: &Hamiltonian, site: &Site, chi: f64, dyp: f64, dym: f64, dxp: f64, dxm: f64) -> NodeHamiltonian {
    let shift = ham.zeta + 0.5 * chi * chi;
    let a = site.fh * site.big_f;
    let h = site.h;
    let ito = 0.5 * chi * chi;
    let s_c = if a > 0.0 { shift * h / a } else { f64::INFINITY };
    let (mut best, mut s_best) = (f64::NEG_INFINITY, 0.0);
    if s_c < 1.0 {
        let (v, s) = ham.h1_on(site, dyp / h, s_c.max(0.0), 1.0);
        let v = v - ito * dyp;
        if v > best {
            best = v;
            s_best = s;
        }
    }
    {
        let (v, s) = ham.h1_on(site, dym / h, 0.0, s_c.min(1.0));
        let v = v - ito * dym;
        if v > best {
            best = v;
            s_best = s;
        }
    }
    let b1 = s_best * a / h - shift;
    let (up, vu) = ham.h0_on(dxp, 0.0, ham.control.v_hi);
    let (dn, vd) = ham.h0_on(dxm, ham.control.v_lo, 0.0);
    let (h0, v) = if up >= dn { (up, vu) } else { (dn, vd) };
    NodeHamiltonian { value: best + h0, v, s: s_best, b1 }
}

/// A priori CFL number `dt (B_bar / dx + max |B1| / dy)` over the grid.
fn cfl_number(params: &ModelParams, grid: &HjbGrid, f_vals: &[Vec<f64>]) -> f64 {
    let shift = params.zeta + 0.5 * params.chi * params.chi;
    let max_f = f_vals.iter().flatten().copied().fold(0.0, f64::max);
    let max_ratio = grid
        .ys
        .iter()
        .map(|&y| {
            let h = y.exp();
            params.f_spec.eval(h) / h
        })
        .fold(0.0, f64::max);
    let speed_y = shift.max(max_ratio * max_f - shift);
    grid.dt() * (params.b_bar() / grid.dx() + speed_y / grid.dy())
}

/// Solves the HJB equation backward against the measure flow `mu_flow`,
/// whose time grid becomes the time grid of the field.
pub fn solve_hjb(mu_flow: &MeasureFlow, params: &ModelParams, spec: &GridSpec) -> Result<ValueField> {
    let grid = HjbGrid::new(mu_flow.times(), spec);
    let (nt, nx, ny) = (grid.n_t(), grid.n_x(), grid.n_y());
    if nx < 3 || ny < 3 {
        return Err(Error::Invalid("HJB grid needs at least 3 nodes per axis".into()));
    }
    let kernels = KernelPair::from_params(params);
    let f_vals: Vec<Vec<f64>> = mu_flow.measures().iter().map(|mu| kernels.f_many(mu, &grid.xs)).collect();
    let cfl = cfl_number(params, &grid, &f_vals);
    if cfl > CFL_LIMIT {
        let required = ((grid.n_t() - 1) as f64 * cfl / CFL_LIMIT).ceil() as usize;
        return Err(Error::Cfl { number: cfl, required });
    }
    let ham = Hamiltonian::new(params);
    let (dt, dx, dy) = (grid.dt(), grid.dx(), grid.dy());
    let chi = params.chi;
    let ax = 0.5 * params.eps * params.eps * dt / (dx * dx);
    let ay = 0.5 * chi * chi * dt / (dy * dy);
    let hs: Vec<f64> = grid.ys.iter().map(|y| y.exp()).collect();
    let fh: Vec<f64> = hs.iter().map(|&h| params.f_spec.eval(h)).collect();
    let amen: Vec<f64> = grid.xs.iter().map(|&x| params.a_spec.eval(x)).collect();
    let slice = nx * ny;
    let mut w = vec![0.0; nt * slice];

    for n in (0..nt - 1).rev() {
        let next = w[(n + 1) * slice..(n + 2) * slice].to_vec();
        let fk = &f_vals[n + 1];
        // Explicit Hamiltonian step, x-line by x-line (rows of fixed x).
        let star: Vec<f64> = (0..nx)
            .into_par_iter()
            .flat_map_iter(|i| {
                let next = &next;
                let row = &next[i * ny..(i + 1) * ny];
                let (hs, fh, amen) = (&hs, &fh, &amen);
                (0..ny).map(move |j| {
                    if j == 0 {
                        return 0.0;
                    }
                    let wij = row[j];
                    let dyp = if j + 1 < ny { (row[j + 1] - wij) / dy } else { 0.0 };
                    let dym = (wij - row[j - 1]) / dy;
                    let dxp = if i + 1 < nx { (next[(i + 1) * ny + j] - wij) / dx } else { 0.0 };
                    let dxm = if i > 0 { (wij - next[(i - 1) * ny + j]) / dx } else { 0.0 };
                    let site = Site { h: hs[j], fh: fh[j], big_f: fk[i], amen: amen[i] };
                    wij + dt * numerical_hamiltonian(&ham, &site, chi, dyp, dym, dxp, dxm).value
                })
            })
            .collect();
        // Implicit discount and x-diffusion along each x-line (fixed y).
        let cols: Vec<Vec<f64>> = (1..ny)
            .into_par_iter()
            .map(|j| {
                let mut rhs: Vec<f64> = (0..nx).map(|i| star[i * ny + j]).collect();
                let mut lower = vec![-ax; nx];
                let mut upper = vec![-ax; nx];
                let mut diag = vec![1.0 + params.rho * dt + 2.0 * ax; nx];
                diag[0] = 1.0 + params.rho * dt + ax;
                diag[nx - 1] = 1.0 + params.rho * dt + ax;
                lower[0] = 0.0;
                upper[nx - 1] = 0.0;
                let mut scratch = Vec::new();
                solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch).map(|_| rhs)
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::LinearSolve(format!("x-diffusion at step {n}")))?;
        let mut mid = vec![0.0; slice];
        for (jj, col) in cols.iter().enumerate() {
            for i in 0..nx {
                mid[i * ny + jj + 1] = col[i];
            }
        }
        // Implicit y-diffusion along each y-line (fixed x); w = 0 at j = 0.
        let m = ny - 1;
        let rows: Vec<Vec<f64>> = (0..nx)
            .into_par_iter()
            .map(|i| {
                let mut rhs = mid[i * ny + 1..(i + 1) * ny].to_vec();
                let lower = vec![-ay; m];
                let mut upper = vec![-ay; m];
                let mut diag = vec![1.0 + 2.0 * ay; m];
                diag[m - 1] = 1.0 + ay;
                upper[m - 1] = 0.0;
                let mut scratch = Vec::new();
                solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch).map(|_| rhs)
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::LinearSolve(format!("y-diffusion at step {n}")))?;
        let out = &mut w[n * slice..(n + 1) * slice];
        for (i, row) in rows.iter().enumerate() {
            out[i * ny] = 0.0;
            out[i * ny + 1..(i + 1) * ny].copy_from_slice(row);
        }
    }
    ValueField::from_values(grid, w, "explicit upwind Hamiltonian, implicit split diffusion", cfl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{default_scenario, degenerate_scenario};

    fn small_spec() -> GridSpec {
        GridSpec { x_min: -0.5, x_max: 0.5, y_min: -8.0, y_max: 0.0, n_x: 17, n_y: 33 }
    }

    #[test]
    fn degenerate_flow_gives_zero_field() {
        let sc = degenerate_scenario();
        let flow = MeasureFlow::constant(&sc.initial.sample(50), sc.model.horizon, 8);
        let v = solve_hjb(&flow, &sc.model, &small_spec()).unwrap();
        assert!(v.values().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn terminal_slice_is_zero_and_structure_holds() {
        let sc = default_scenario();
        let flow = MeasureFlow::constant(&sc.initial.sample(200), sc.model.horizon, 32);
        let v = solve_hjb(&flow, &sc.model, &small_spec()).unwrap();
        assert!(v.slice(32).iter().all(|&w| w == 0.0));
        assert_eq!(v.meta.positivity_violations, 0);
        assert_eq!(v.meta.monotonicity_violations, 0);
        assert!(v.value(0.0, 0.0, 0.1) > 0.0);
    }

    #[test]
    fn cfl_violation_names_required_steps() {
        let sc = default_scenario();
        let flow = MeasureFlow::constant(&sc.initial.sample(50), sc.model.horizon * 50.0, 2);
        match solve_hjb(&flow, &sc.model, &small_spec()) {
            Err(Error::Cfl { required, .. }) => assert!(required > 2),
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn gradient_of_linear_field() {
        let grid = HjbGrid::new(&[0.0, 1.0], &small_spec());
        let (nx, ny) = (grid.n_x(), grid.n_y());
        let mut w = vec![0.0; 2 * nx * ny];
        for k in 0..2 {
            for i in 0..nx {
                for j in 0..ny {
                    w[(k * nx + i) * ny + j] = 3.0 * grid.ys[j];
                }
            }
        }
        let f = ValueField::from_values(grid, w, "test", 0.0).unwrap();
        let h: f64 = (-4.1f64).exp();
        let g = f.gradients(0.5, 0.1, h);
        assert!((g.dh_v - 3.0 / h).abs() < 1e-9 / h);
        assert!(g.dx_v.abs() < 1e-15);
        assert!(!g.clamped);
        let z = f.gradients(0.5, 0.1, 0.0);
        assert_eq!((z.dx_v, z.dh_v), (0.0, 0.0));
    }

    #[test]
    fn zero_field_gradients_vanish() {
        let grid = HjbGrid::new(&[0.0, 0.5, 1.0], &small_spec());
        let f = ValueField::zero(grid);
        let g = f.gradients(0.3, 0.0, 0.2);
        assert_eq!((g.dx_v, g.dh_v), (0.0, 0.0));
    }
}
