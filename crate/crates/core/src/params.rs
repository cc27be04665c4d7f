//! Model and numerical parameters, their validation, the scenario file
//! format and the canonical default scenario.
//!
//! Function-valued parameters (kernels, production, amenity, cost) come from
//! small tagged families, so every Lipschitz constant is exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dynamics::horizon_constants;
use crate::error::{Error, Result, Violation};
use crate::measures::EmpiricalMeasure;
use crate::rng::NoiseKey;

/// Gaussian-bump kernel `floor + (cap - floor) exp(-r^2 / length^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub floor: f64,
    pub cap: f64,
    pub length: f64,
}

impl Kernel {
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        let u = r / self.length;
        self.floor + (self.cap - self.floor) * (-u * u).exp()
    }

    /// Exact Lipschitz constant `(cap - floor) sqrt(2/e) / length`.
    pub fn lipschitz(&self) -> f64 {
        (self.cap - self.floor) * (2.0 / std::f64::consts::E).sqrt() / self.length
    }

    pub fn is_constant(&self) -> bool {
        self.cap == self.floor
    }
}

/// Production function `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Production {
    /// `f(h) = beta h`
    Linear { beta: f64 },
    /// `f(h) = beta h / (1 + h / h_sat)`
    Saturating { beta: f64, h_sat: f64 },
}

impl Production {
    #[inline]
    pub fn eval(&self, h: f64) -> f64 {
        match *self {
            Production::Linear { beta } => beta * h,
            Production::Saturating { beta, h_sat } => beta * h / (1.0 + h / h_sat),
        }
    }

    /// Lipschitz constant; for both families it is the slope at zero.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Production::Linear { beta } | Production::Saturating { beta, .. } => beta,
        }
    }
}

/// Amenity `A(x) = lo + (hi - lo)(1 + tanh(x / length)) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amenity {
    pub lo: f64,
    pub hi: f64,
    pub length: f64,
}

impl Amenity {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if self.hi == self.lo {
            return self.lo;
        }
        self.lo + (self.hi - self.lo) * 0.5 * (1.0 + (x / self.length).tanh())
    }

    pub fn lipschitz(&self) -> f64 {
        if self.hi == self.lo {
            0.0
        } else {
            (self.hi - self.lo) / (2.0 * self.length)
        }
    }
}

/// Movement cost `a(v) = kappa v^degree` with an even degree `>= 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cost {
    pub kappa: f64,
    pub degree: u32,
}

impl Cost {
    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        self.kappa * v.powi(self.degree as i32)
    }
}

/// Velocity set `K = [v_lo, v_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBox {
    pub v_lo: f64,
    pub v_hi: f64,
}

impl ControlBox {
    #[inline]
    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.v_lo).min(self.v_hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.v_lo && v <= self.v_hi
    }

    /// Bound on the spatial drift, `max(|v_lo|, |v_hi|)`.
    pub fn b_bar(&self) -> f64 {
        self.v_lo.abs().max(self.v_hi.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub rho: f64,
    pub zeta: f64,
    pub chi: f64,
    pub eps: f64,
    pub gamma: f64,
    pub sigma: f64,
    /// `(1 - gamma)(1 - sigma)`; filled by [`validate`].
    pub eta_exp: f64,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub kernel1: Kernel,
    pub kernel2: Kernel,
    pub f_spec: Production,
    /// Amenity function `A`.
    pub a_spec: Amenity,
    pub cost_spec: Cost,
    pub control_box: ControlBox,
    pub horizon: f64,
}

impl ModelParams {
    pub fn eta(&self) -> f64 {
        (1.0 - self.gamma) * (1.0 - self.sigma)
    }
    pub fn l_f(&self) -> f64 {
        self.f_spec.lipschitz()
    }
    pub fn l_a(&self) -> f64 {
        self.a_spec.lipschitz()
    }
    pub fn l_eta1(&self) -> f64 {
        self.kernel1.lipschitz()
    }
    pub fn l_eta2(&self) -> f64 {
        self.kernel2.lipschitz()
    }
    pub fn a_lo(&self) -> f64 {
        self.a_spec.lo
    }
    pub fn a_hi(&self) -> f64 {
        self.a_spec.hi
    }
    /// `Theta / theta`.
    pub fn theta_ratio(&self) -> f64 {
        self.theta_hi / self.theta_lo
    }
    pub fn b_bar(&self) -> f64 {
        self.control_box.b_bar()
    }
}

/// Log-domain HJB grid: `x` in `[x_min, x_max]`, `y = ln h` in `[y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub n_x: usize,
    pub n_y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericsParams {
    pub n_particles: usize,
    pub n_time: usize,
    pub grid: GridSpec,
    pub damping: f64,
    pub tol_fp: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub mc_paths: usize,
    /// Monte Carlo sub-steps per flow time step.
    pub mc_substeps: usize,
    /// Atoms kept per measure when a flow distance must subsample.
    pub ot_atoms: usize,
    /// Atoms kept per measure for the Hölder seminorm of large flows.
    pub holder_atoms: usize,
    /// Worker threads; 0 lets the runtime decide. Results never depend on it.
    pub threads: usize,
}

/// Law of the initial state: `x ~ N(x_mean, x_std^2)`, `h` lognormal with
/// median `h_median` and log-sd `h_logstd`, and a point mass at `h = 0` with
/// probability `zero_fraction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialLaw {
    pub x_mean: f64,
    pub x_std: f64,
    pub h_median: f64,
    pub h_logstd: f64,
    pub zero_fraction: f64,
    pub seed: u64,
}

impl InitialLaw {
    /// Deterministic `n`-atom sample with uniform weights. Atom `i` depends
    /// only on `(seed, i)`, so samples of different sizes are nested.
    pub fn sample(&self, n: usize) -> EmpiricalMeasure {
        let key = NoiseKey::new(self.seed, "initial-law");
        let mut xs = Vec::with_capacity(n);
        let mut hs = Vec::with_capacity(n);
        for i in 0..n as u64 {
            let u = key.uniform(i, 0);
            let (z1, z2) = key.normals2(i, 1);
            xs.push(self.x_mean + self.x_std * z1);
            if u < self.zero_fraction {
                hs.push(0.0);
            } else {
                hs.push(self.h_median * (self.h_logstd * z2).exp());
            }
        }
        EmpiricalMeasure::uniform(xs, hs).expect("sampled atoms are valid")
    }
}

/// A complete run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: ModelParams,
    pub numerics: NumericsParams,
    pub initial: InitialLaw,
    /// When set, the horizon was resolved as this fraction of `T_max`.
    pub horizon_fraction: Option<f64>,
}

impl Scenario {
    /// Initial measure with `numerics.n_particles` atoms.
    pub fn mu0(&self) -> EmpiricalMeasure {
        self.initial.sample(self.numerics.n_particles)
    }

    /// Parses a scenario file. Keys not present keep their default values.
    pub fn from_config_str(text: &str) -> Result<Scenario> {
        let entries = parse_key_values(text)?;
        let mut sc = default_unresolved();
        let mut horizon_abs: Option<f64> = None;
        let mut fraction: Option<f64> = Some(DEFAULT_HORIZON_FRACTION);
        for (key, (line, value)) in &entries {
            let num = || -> Result<f64> {
                value.parse::<f64>().map_err(|_| Error::Config { line: *line, message: format!("`{key}` expects a number, got `{value}`") })
            };
            let int = || -> Result<u64> {
                value.parse::<u64>().map_err(|_| Error::Config { line: *line, message: format!("`{key}` expects a nonnegative integer, got `{value}`") })
            };
            let m = &mut sc.model;
            let n = &mut sc.numerics;
            let init = &mut sc.initial;
            match key.as_str() {
                "rho" => m.rho = num()?,
                "zeta" => m.zeta = num()?,
                "chi" => m.chi = num()?,
                "eps" => m.eps = num()?,
                "gamma" => m.gamma = num()?,
                "sigma" => m.sigma = num()?,
                "theta_lo" => m.theta_lo = num()?,
                "theta_hi" => m.theta_hi = num()?,
                "kernel1.floor" => m.kernel1.floor = num()?,
                "kernel1.cap" => m.kernel1.cap = num()?,
                "kernel1.length" => m.kernel1.length = num()?,
                "kernel2.floor" => m.kernel2.floor = num()?,
                "kernel2.cap" => m.kernel2.cap = num()?,
                "kernel2.length" => m.kernel2.length = num()?,
                "f_spec.kind" => {
                    let beta = m.f_spec.lipschitz();
                    m.f_spec = match value.as_str() {
                        "linear" => Production::Linear { beta },
                        "saturating" => Production::Saturating { beta, h_sat: DEFAULT_H_SAT },
                        other => return Err(Error::Config { line: *line, message: format!("unknown production kind `{other}` (linear, saturating)") }),
                    }
                }
                "f_spec.beta" => {
                    let b = num()?;
                    match &mut m.f_spec {
                        Production::Linear { beta } | Production::Saturating { beta, .. } => *beta = b,
                    }
                }
                "f_spec.h_sat" => {
                    let v = num()?;
                    if let Production::Saturating { h_sat, .. } = &mut m.f_spec {
                        *h_sat = v;
                    }
                }
                "A_spec.lo" => m.a_spec.lo = num()?,
                "A_spec.hi" => m.a_spec.hi = num()?,
                "A_spec.length" => m.a_spec.length = num()?,
                "cost_spec.kappa" => m.cost_spec.kappa = num()?,
                "cost_spec.degree" => m.cost_spec.degree = int()? as u32,
                "control_box.v_lo" => m.control_box.v_lo = num()?,
                "control_box.v_hi" => m.control_box.v_hi = num()?,
                "horizon" => {
                    horizon_abs = Some(num()?);
                }
                "horizon_fraction" => fraction = Some(num()?),
                "init.x_mean" => init.x_mean = num()?,
                "init.x_std" => init.x_std = num()?,
                "init.h_median" => init.h_median = num()?,
                "init.h_logstd" => init.h_logstd = num()?,
                "init.zero_fraction" => init.zero_fraction = num()?,
                "init.seed" => init.seed = int()?,
                "n_particles" => n.n_particles = int()? as usize,
                "n_time" => n.n_time = int()? as usize,
                "grid.x_min" => n.grid.x_min = num()?,
                "grid.x_max" => n.grid.x_max = num()?,
                "grid.y_min" => n.grid.y_min = num()?,
                "grid.y_max" => n.grid.y_max = num()?,
                "grid.n_x" => n.grid.n_x = int()? as usize,
                "grid.n_y" => n.grid.n_y = int()? as usize,
                "damping" => n.damping = num()?,
                "tol_fp" => n.tol_fp = num()?,
                "max_iter" => n.max_iter = int()? as usize,
                "seed" => n.seed = int()?,
                "mc_paths" => n.mc_paths = int()? as usize,
                "mc_substeps" => n.mc_substeps = int()? as usize,
                "ot_atoms" => n.ot_atoms = int()? as usize,
                "holder_atoms" => n.holder_atoms = int()? as usize,
                "threads" => n.threads = int()? as usize,
                _ => return Err(Error::Config { line: *line, message: format!("unknown key `{key}`") }),
            }
        }
        if entries.contains_key("horizon") && entries.contains_key("horizon_fraction") {
            let line = entries["horizon_fraction"].0;
            return Err(Error::Config { line, message: "`horizon` and `horizon_fraction` are mutually exclusive".into() });
        }
        if let Some(t) = horizon_abs {
            sc.model.horizon = t;
            fraction = None;
        }
        sc.horizon_fraction = fraction;
        sc.resolve()
    }

    /// Resolves a fractional horizon against `T_max` of the sampled initial
    /// measure, then validates everything.
    pub fn resolve(mut self) -> Result<Scenario> {
        let mut violations = Vec::new();
        check_initial(&self.initial, &mut violations);
        if let Err(Error::Validation(v)) = validate_numerics(&self.numerics) {
            violations.extend(v);
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        if let Some(frac) = self.horizon_fraction {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(Error::Validation(vec![Violation::new("horizon_fraction", "must lie in (0,1]").with_witness(format!("{frac}"))]));
            }
            // Constants depend on the model only through checked fields; validate first.
            self.model.horizon = 1.0;
            let model = validate(self.model.clone()).map_err(Error::Validation)?;
            let hc = horizon_constants(&self.mu0(), &model);
            if !hc.t_max.is_finite() {
                return Err(Error::Validation(vec![Violation::new(
                    "horizon_fraction",
                    "T_max is infinite for a zero-capital initial law; set `horizon` instead",
                )]));
            }
            self.model.horizon = frac * hc.t_max;
        }
        self.model = validate(self.model).map_err(Error::Validation)?;
        Ok(self)
    }

    /// Canonical text form: every semantic input, fixed key order, shortest
    /// round-trip number formatting. Parsing it reproduces the scenario.
    pub fn to_config_string(&self) -> String {
        let m = &self.model;
        let n = &self.numerics;
        let i = &self.initial;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("rho", fmt_num(m.rho));
        kv("zeta", fmt_num(m.zeta));
        kv("chi", fmt_num(m.chi));
        kv("eps", fmt_num(m.eps));
        kv("gamma", fmt_num(m.gamma));
        kv("sigma", fmt_num(m.sigma));
        kv("theta_lo", fmt_num(m.theta_lo));
        kv("theta_hi", fmt_num(m.theta_hi));
        for (name, k) in [("kernel1", m.kernel1), ("kernel2", m.kernel2)] {
            kv(&format!("{name}.floor"), fmt_num(k.floor));
            kv(&format!("{name}.cap"), fmt_num(k.cap));
            kv(&format!("{name}.length"), fmt_num(k.length));
        }
        match m.f_spec {
            Production::Linear { beta } => {
                kv("f_spec.kind", "linear".into());
                kv("f_spec.beta", fmt_num(beta));
            }
            Production::Saturating { beta, h_sat } => {
                kv("f_spec.kind", "saturating".into());
                kv("f_spec.beta", fmt_num(beta));
                kv("f_spec.h_sat", fmt_num(h_sat));
            }
        }
        kv("A_spec.lo", fmt_num(m.a_spec.lo));
        kv("A_spec.hi", fmt_num(m.a_spec.hi));
        kv("A_spec.length", fmt_num(m.a_spec.length));
        kv("cost_spec.kappa", fmt_num(m.cost_spec.kappa));
        kv("cost_spec.degree", m.cost_spec.degree.to_string());
        kv("control_box.v_lo", fmt_num(m.control_box.v_lo));
        kv("control_box.v_hi", fmt_num(m.control_box.v_hi));
        match self.horizon_fraction {
            Some(f) => kv("horizon_fraction", fmt_num(f)),
            None => kv("horizon", fmt_num(m.horizon)),
        }
        kv("init.x_mean", fmt_num(i.x_mean));
        kv("init.x_std", fmt_num(i.x_std));
        kv("init.h_median", fmt_num(i.h_median));
        kv("init.h_logstd", fmt_num(i.h_logstd));
        kv("init.zero_fraction", fmt_num(i.zero_fraction));
        kv("init.seed", i.seed.to_string());
        kv("n_particles", n.n_particles.to_string());
        kv("n_time", n.n_time.to_string());
        kv("grid.x_min", fmt_num(n.grid.x_min));
        kv("grid.x_max", fmt_num(n.grid.x_max));
        kv("grid.y_min", fmt_num(n.grid.y_min));
        kv("grid.y_max", fmt_num(n.grid.y_max));
        kv("grid.n_x", n.grid.n_x.to_string());
        kv("grid.n_y", n.grid.n_y.to_string());
        kv("damping", fmt_num(n.damping));
        kv("tol_fp", fmt_num(n.tol_fp));
        kv("max_iter", n.max_iter.to_string());
        kv("seed", n.seed.to_string());
        kv("mc_paths", n.mc_paths.to_string());
        kv("mc_substeps", n.mc_substeps.to_string());
        kv("ot_atoms", n.ot_atoms.to_string());
        kv("holder_atoms", n.holder_atoms.to_string());
        s
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

/// Parses `key = value` lines; `#` starts a comment. Duplicate keys are errors.
fn parse_key_values(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(Error::Config { line, message: format!("expected `key = value`, got `{content}`") });
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config { line, message: "empty key or value".into() });
        }
        if out.insert(k.clone(), (line, v)).is_some() {
            return Err(Error::Config { line, message: format!("duplicate key `{k}`") });
        }
    }
    Ok(out)
}

const DEFAULT_H_SAT: f64 = 1.0;
const DEFAULT_HORIZON_FRACTION: f64 = 0.8;

fn default_unresolved() -> Scenario {
    let model = ModelParams {
        rho: 0.05,
        zeta: 0.1,
        chi: 0.2,
        eps: 0.004,
        gamma: 0.5,
        sigma: 0.5,
        eta_exp: 0.25,
        theta_lo: 1.0,
        theta_hi: 1.25,
        kernel1: Kernel { floor: 1.0, cap: 1.25, length: 0.1 },
        kernel2: Kernel { floor: 1.0, cap: 1.25, length: 0.1 },
        f_spec: Production::Saturating { beta: 1.0, h_sat: DEFAULT_H_SAT },
        a_spec: Amenity { lo: 0.5, hi: 1.5, length: 0.1 },
        cost_spec: Cost { kappa: 1.0, degree: 2 },
        control_box: ControlBox { v_lo: -0.05, v_hi: 0.05 },
        horizon: 0.1,
    };
    let numerics = NumericsParams {
        n_particles: 2000,
        n_time: 64,
        grid: GridSpec { x_min: -0.5, x_max: 0.5, y_min: -8.0, y_max: 0.0, n_x: 128, n_y: 128 },
        damping: 0.5,
        tol_fp: 2e-6,
        max_iter: 25,
        seed: 20240917,
        mc_paths: 4000,
        mc_substeps: 4,
        ot_atoms: 256,
        holder_atoms: 64,
        threads: 0,
    };
    let initial = InitialLaw { x_mean: 0.0, x_std: 0.1, h_median: 0.1, h_logstd: 0.3, zero_fraction: 0.0, seed: 7 };
    Scenario { model, numerics, initial, horizon_fraction: Some(DEFAULT_HORIZON_FRACTION) }
}

/// The canonical baseline: quadratic cost, saturating production, Gaussian
/// bump kernels, horizon at 80% of the admissible `T_max`.
pub fn default_scenario() -> Scenario {
    default_unresolved().resolve().expect("default scenario is valid")
}

/// Scenario with the whole population at zero capital.
pub fn degenerate_scenario() -> Scenario {
    let mut sc = default_unresolved();
    sc.initial.zero_fraction = 1.0;
    sc.horizon_fraction = None;
    sc.model.horizon = 0.1;
    sc.resolve().expect("degenerate scenario is valid")
}

fn check_initial(i: &InitialLaw, v: &mut Vec<Violation>) {
    if !(i.x_std >= 0.0 && i.x_std.is_finite()) {
        v.push(Violation::new("init.x_std", "must be finite and >= 0"));
    }
    if !(i.h_median > 0.0 && i.h_median.is_finite()) {
        v.push(Violation::new("init.h_median", "must be finite and > 0"));
    }
    if !(i.h_logstd >= 0.0 && i.h_logstd.is_finite()) {
        v.push(Violation::new("init.h_logstd", "must be finite and >= 0"));
    }
    if !(0.0..=1.0).contains(&i.zero_fraction) {
        v.push(Violation::new("init.zero_fraction", "must lie in [0,1]"));
    }
}

fn positive(v: &mut Vec<Violation>, field: &str, x: f64) {
    if !(x > 0.0 && x.is_finite()) {
        v.push(Violation::new(field, "must be finite and > 0").with_witness(format!("{x}")));
    }
}

/// Deterministic pseudo-random pairs for the sampled checks.
fn sample_points(n: usize, label: &str, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let key = NoiseKey::new(0x5eed, label);
    let mut rng = key.generator(0, 0);
    (0..n)
        .map(|_| {
            let a = lo + (hi - lo) * crate::rng::unit_f64(&mut rng);
            let b = lo + (hi - lo) * crate::rng::unit_f64(&mut rng);
            (a, b)
        })
        .collect()
}

/// Checks every standing assumption and fills derived quantities. Returns
/// the full list of violations on failure.
pub fn validate(mut p: ModelParams) -> std::result::Result<ModelParams, Vec<Violation>> {
    let mut v = Vec::new();
    positive(&mut v, "rho", p.rho);
    positive(&mut v, "zeta", p.zeta);
    positive(&mut v, "chi", p.chi);
    positive(&mut v, "eps", p.eps);
    positive(&mut v, "horizon", p.horizon);
    if !(p.sigma > 0.0 && p.sigma < 1.0) {
        v.push(Violation::new("sigma", "sigma out of (0,1)").with_witness(format!("{}", p.sigma)));
    }
    if !(p.gamma > 0.0 && p.gamma < 1.0) {
        v.push(Violation::new("gamma", "gamma out of (0,1)").with_witness(format!("{}", p.gamma)));
    }

    // Kernels.
    if !(p.theta_lo > 0.0) {
        v.push(Violation::new("theta_lo", "kernel violates θ > 0").with_witness(format!("{}", p.theta_lo)));
    }
    if !(p.theta_lo <= p.theta_hi) {
        v.push(Violation::new("theta_hi", "requires θ <= Θ"));
    }
    for (name, k) in [("kernel1", p.kernel1), ("kernel2", p.kernel2)] {
        if !(k.floor > 0.0) {
            v.push(Violation::new(name, "kernel violates θ > 0").with_witness(format!("floor = {}", k.floor)));
            continue;
        }
        if !(k.length > 0.0 && k.length.is_finite()) {
            v.push(Violation::new(name, "kernel length must be > 0"));
            continue;
        }
        if !(k.cap >= k.floor) {
            v.push(Violation::new(name, "kernel cap below floor"));
            continue;
        }
        let mut bad = None;
        for i in 0..=2000 {
            let r = 10.0 * k.length * i as f64 / 2000.0;
            let e = k.eval(r);
            if e < p.theta_lo || e > p.theta_hi {
                bad = Some((r, e));
                break;
            }
        }
        if let Some((r, e)) = bad {
            v.push(Violation::new(name, "kernel leaves [θ, Θ]").with_witness(format!("η({r}) = {e}")));
        }
    }

    // Production.
    let l_f = p.f_spec.lipschitz();
    match p.f_spec {
        Production::Linear { beta } => positive(&mut v, "f_spec.beta", beta),
        Production::Saturating { beta, h_sat } => {
            positive(&mut v, "f_spec.beta", beta);
            positive(&mut v, "f_spec.h_sat", h_sat);
        }
    }
    if v.iter().all(|x| !x.field.starts_with("f_spec")) {
        if p.f_spec.eval(0.0) != 0.0 {
            v.push(Violation::new("f_spec", "f(0) must be 0"));
        }
        for (a, b) in sample_points(10_000, "f-pairs", 0.0, 100.0) {
            let (fa, fb) = (p.f_spec.eval(a), p.f_spec.eval(b));
            if (a < b && fa > fb) || (a > b && fa < fb) {
                v.push(Violation::new("f_spec", "f must be nondecreasing").with_witness(format!("h1 = {a}, h2 = {b}")));
                break;
            }
            if a != b && (fa - fb).abs() > l_f * (a - b).abs() * (1.0 + 1e-12) {
                v.push(Violation::new("f_spec", "Lipschitz bound L_f violated").with_witness(format!("h1 = {a}, h2 = {b}")));
                break;
            }
        }
        if l_f > 2.0 {
            v.push(Violation::new("f_spec.beta", "L_f must be <= 2 so that f(h) <= 2h (two-sided D_pH1 bound)").with_witness(format!("L_f = {l_f}")));
        }
    }

    // Amenity.
    let a = p.a_spec;
    if !(a.lo > 0.0) {
        v.push(Violation::new("A_spec.lo", "requires 0 < A_lo").with_witness(format!("{}", a.lo)));
    } else if !(a.hi >= a.lo && a.hi.is_finite()) {
        v.push(Violation::new("A_spec.hi", "requires A_lo <= A_hi < inf"));
    } else if a.hi > a.lo && !(a.length > 0.0) {
        v.push(Violation::new("A_spec.length", "must be > 0"));
    } else {
        let span = 50.0 * a.length.max(1.0);
        for i in 0..=2000 {
            let x = -span + 2.0 * span * i as f64 / 2000.0;
            let ax = a.eval(x);
            if ax < a.lo || ax > a.hi {
                v.push(Violation::new("A_spec", "A leaves [A_lo, A_hi]").with_witness(format!("A({x}) = {ax}")));
                break;
            }
        }
    }

    // Control set and cost.
    let k = p.control_box;
    if !(k.v_lo <= 0.0 && 0.0 <= k.v_hi && k.v_lo.is_finite() && k.v_hi.is_finite()) {
        v.push(Violation::new("control_box", "requires v_lo <= 0 <= v_hi").with_witness(format!("[{}, {}]", k.v_lo, k.v_hi)));
    }
    let c = p.cost_spec;
    if !(c.kappa > 0.0) {
        v.push(Violation::new("cost_spec.kappa", "must be > 0"));
    }
    if c.degree < 2 || !c.degree.is_multiple_of(2) {
        v.push(Violation::new("cost_spec.degree", "must be even and >= 2").with_witness(format!("{}", c.degree)));
    } else if c.kappa > 0.0 && k.v_lo < k.v_hi {
        for (a1, b1) in sample_points(2000, "cost-pairs", k.v_lo, k.v_hi) {
            if a1 == b1 {
                continue;
            }
            let mid = c.eval(0.5 * (a1 + b1));
            if !(mid < 0.5 * (c.eval(a1) + c.eval(b1))) {
                v.push(Violation::new("cost_spec", "a is not strictly convex").with_witness(format!("v1 = {a1}, v2 = {b1}")));
                break;
            }
        }
    }

    if v.is_empty() {
        p.eta_exp = p.eta();
        Ok(p)
    } else {
        Err(v)
    }
}

pub fn validate_numerics(n: &NumericsParams) -> Result<()> {
    let mut v = Vec::new();
    if n.n_particles < 1 {
        v.push(Violation::new("n_particles", "must be >= 1"));
    }
    if n.n_time < 2 {
        v.push(Violation::new("n_time", "must be >= 2"));
    }
    let g = &n.grid;
    if g.n_x < 8 || g.n_y < 8 {
        v.push(Violation::new("grid", "node counts must be >= 8"));
    }
    if !(g.x_min < g.x_max) {
        v.push(Violation::new("grid.x_min", "requires x_min < x_max"));
    }
    if !(g.y_min < g.y_max) {
        v.push(Violation::new("grid.y_min", "requires y_min < y_max"));
    }
    if !(n.damping > 0.0 && n.damping <= 1.0) {
        v.push(Violation::new("damping", "λ must lie in (0,1]").with_witness(format!("{}", n.damping)));
    }
    if !(n.tol_fp > 0.0) {
        v.push(Violation::new("tol_fp", "must be > 0"));
    }
    if n.max_iter < 1 {
        v.push(Violation::new("max_iter", "must be >= 1"));
    }
    if n.mc_paths < 2 {
        v.push(Violation::new("mc_paths", "must be >= 2"));
    }
    if n.mc_substeps < 1 {
        v.push(Violation::new("mc_substeps", "must be >= 1"));
    }
    let cap = crate::measures::EXACT_SUPPORT_CAP / 2;
    if !(2..=cap).contains(&n.ot_atoms) {
        v.push(Violation::new("ot_atoms", format!("must lie in [2, {cap}]")));
    }
    if !(2..=cap).contains(&n.holder_atoms) {
        v.push(Violation::new("holder_atoms", format!("must lie in [2, {cap}]")));
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(v))
    }
}
