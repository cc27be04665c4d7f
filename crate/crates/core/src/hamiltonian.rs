//! Closed-form Hamiltonian calculus.
//!
//! `H0(p) = sup_{v in K} (p v - a(v))` and
//! `H1(x,h,mu,p) = sup_{s in [0,1]} k(s)` with
//! `k(s) = s a p - zeta h p + b (1-s)^eta / (1-sigma)`,
//! `a = f(h) F(x,mu)` and `b = A(x)^{1-sigma} f(h)^eta F(x,mu)^{gamma(1-sigma)}`.
//! The maximizer is `s = 0` up to the threshold `p0 = (1-gamma) b / a` and
//! `1 - (p0/p)^{1/(1-eta)}` beyond it.

use crate::interaction::KernelPair;
use crate::measures::{moment_m, EmpiricalMeasure};
use crate::params::{Amenity, ControlBox, Cost, ModelParams, Production};
use crate::rng::{unit_f64, NoiseKey};

/// A threshold that may be infinite by convention (zero capital or zero
/// population capital). Never encoded as a floating sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Finite(f64),
    Infinite,
}

impl Threshold {
    /// True when `p` lies on the `s = 0` side, `p <= p0`.
    pub fn at_or_above(&self, p: f64) -> bool {
        match *self {
            Threshold::Finite(p0) => p <= p0,
            Threshold::Infinite => true,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Threshold::Finite(v) => Some(v),
            Threshold::Infinite => None,
        }
    }
}

/// The local quantities `(h, f(h), F(x,mu), A(x))` that H1 depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub h: f64,
    pub fh: f64,
    pub big_f: f64,
    pub amen: f64,
}

/// Second derivative value; `at_threshold` marks evaluation exactly at `p0`,
/// where the right limit is returned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondDerivative {
    pub value: f64,
    pub at_threshold: bool,
}

/// Full readout of H1 at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H1Breakdown {
    pub p0: Threshold,
    pub s_bar: f64,
    pub value: f64,
    pub dp: f64,
    pub dpp: SecondDerivative,
}

/// Parameter bundle for Hamiltonian evaluation; cheap to copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hamiltonian {
    pub gamma: f64,
    pub sigma: f64,
    pub eta: f64,
    pub zeta: f64,
    pub cost: Cost,
    pub control: ControlBox,
    pub f_spec: Production,
    pub a_spec: Amenity,
}

impl Hamiltonian {
    pub fn new(p: &ModelParams) -> Self {
        Self { gamma: p.gamma, sigma: p.sigma, eta: p.eta(), zeta: p.zeta, cost: p.cost_spec, control: p.control_box, f_spec: p.f_spec, a_spec: p.a_spec }
    }

    #[inline]
    pub fn site(&self, x: f64, h: f64, big_f: f64) -> Site {
        Site { h, fh: self.f_spec.eval(h), big_f, amen: self.a_spec.eval(x) }
    }

    /// `b = A^{1-sigma} f^eta F^{gamma(1-sigma)}`, zero when `f` or `F` vanishes.
    #[inline]
    pub fn b(&self, s: &Site) -> f64 {
        if s.fh == 0.0 || s.big_f == 0.0 {
            return 0.0;
        }
        s.amen.powf(1.0 - self.sigma) * s.fh.powf(self.eta) * s.big_f.powf(self.gamma * (1.0 - self.sigma))
    }

    #[inline]
    pub fn p0(&self, s: &Site) -> Threshold {
        if s.fh == 0.0 || s.big_f == 0.0 {
            return Threshold::Infinite;
        }
        let e = self.gamma * (1.0 - self.sigma) - 1.0;
        let v = (1.0 - self.gamma) * s.amen.powf(1.0 - self.sigma) * s.fh.powf(self.eta - 1.0) * s.big_f.powf(e);
        if v.is_finite() {
            Threshold::Finite(v)
        } else {
            Threshold::Infinite
        }
    }

    /// `(p0/p)^{1/(1-eta)}` for `p > p0`.
    #[inline]
    fn ratio(&self, p0: f64, p: f64) -> f64 {
        (p0 / p).powf(1.0 / (1.0 - self.eta))
    }

    #[inline]
    pub fn s_bar(&self, s: &Site, p: f64) -> f64 {
        match self.p0(s) {
            Threshold::Finite(p0) if p > p0 => 1.0 - self.ratio(p0, p),
            _ => 0.0,
        }
    }

    #[inline]
    pub fn h1(&self, s: &Site, p: f64) -> f64 {
        let a = s.fh * s.big_f;
        match self.p0(s) {
            Threshold::Finite(p0) if p > p0 => {
                let tail = (p0 / p).powf(self.eta / (1.0 - self.eta));
                (a - self.zeta * s.h) * p + (1.0 - self.eta) / self.eta * a * p0 * tail
            }
            _ => self.b(s) / (1.0 - self.sigma) - self.zeta * s.h * p,
        }
    }

    #[inline]
    pub fn dp_h1(&self, s: &Site, p: f64) -> f64 {
        let a = s.fh * s.big_f;
        match self.p0(s) {
            Threshold::Finite(p0) if p > p0 => -self.zeta * s.h + a * (1.0 - self.ratio(p0, p)),
            _ => -self.zeta * s.h,
        }
    }

    pub fn dpp_h1(&self, s: &Site, p: f64) -> SecondDerivative {
        let a = s.fh * s.big_f;
        match self.p0(s) {
            Threshold::Finite(p0) if p > p0 => SecondDerivative { value: a * self.ratio(p0, p) / ((1.0 - self.eta) * p), at_threshold: false },
            Threshold::Finite(p0) if p == p0 => SecondDerivative { value: a / ((1.0 - self.eta) * p0), at_threshold: true },
            _ => SecondDerivative { value: 0.0, at_threshold: false },
        }
    }

    /// Bound on `|D2_pp H1|`: `(1-eta)^{-1}(1-gamma)^{-1} A_lo^{sigma-1} f^{2-eta} F^{2-gamma(1-sigma)}`.
    pub fn dpp_bound(&self, s: &Site) -> f64 {
        if s.fh == 0.0 || s.big_f == 0.0 {
            return 0.0;
        }
        self.a_spec.lo.powf(self.sigma - 1.0) * s.fh.powf(2.0 - self.eta) * s.big_f.powf(2.0 - self.gamma * (1.0 - self.sigma))
            / ((1.0 - self.eta) * (1.0 - self.gamma))
    }

    /// Running utility `U(s) = (A ((1-s) f)^{1-gamma} F^gamma)^{1-sigma} / (1-sigma)`.
    #[inline]
    pub fn utility(&self, s: &Site, save: f64) -> f64 {
        if s.fh == 0.0 || s.big_f == 0.0 || save >= 1.0 {
            return 0.0;
        }
        let c = s.amen * ((1.0 - save) * s.fh).powf(1.0 - self.gamma) * s.big_f.powf(self.gamma);
        c.powf(1.0 - self.sigma) / (1.0 - self.sigma)
    }

    /// The objective `k(s)` maximized by H1.
    #[inline]
    pub fn objective(&self, s: &Site, save: f64, p: f64) -> f64 {
        save * s.fh * s.big_f * p - self.zeta * s.h * p + self.utility(s, save)
    }

    /// Supremum of `k` over `[lo, hi] ⊂ [0,1]`; `k` is concave so the
    /// maximizer is the clamped unconstrained one. Returns `(value, s*)`.
    #[inline]
    pub fn h1_on(&self, s: &Site, p: f64, lo: f64, hi: f64) -> (f64, f64) {
        let star = self.s_bar(s, p).max(lo).min(hi);
        (self.objective(s, star, p), star)
    }

    pub fn breakdown(&self, s: &Site, p: f64) -> H1Breakdown {
        H1Breakdown { p0: self.p0(s), s_bar: self.s_bar(s, p), value: self.h1(s, p), dp: self.dp_h1(s, p), dpp: self.dpp_h1(s, p) }
    }

    /// Unconstrained maximizer of `p v - kappa v^{2m}`.
    #[inline]
    fn v_free(&self, p: f64) -> f64 {
        let m2 = self.cost.degree as f64;
        if p == 0.0 {
            return 0.0;
        }
        let mag = (p.abs() / (m2 * self.cost.kappa)).powf(1.0 / (m2 - 1.0));
        mag.copysign(p)
    }

    /// Maximizer of `p v - a(v)` over `K`, the envelope derivative `D_p H0`.
    #[inline]
    pub fn dp_h0(&self, p: f64) -> f64 {
        self.control.clamp(self.v_free(p))
    }

    #[inline]
    pub fn h0(&self, p: f64) -> f64 {
        let v = self.dp_h0(p);
        p * v - self.cost.eval(v)
    }

    /// `sup_{v in [lo, hi]} (p v - a(v))` with its maximizer.
    #[inline]
    pub fn h0_on(&self, p: f64, lo: f64, hi: f64) -> (f64, f64) {
        let v = self.v_free(p).max(lo).min(hi);
        (p * v - self.cost.eval(v), v)
    }
}

fn site_of(p: &ModelParams, x: f64, h: f64, mu: &EmpiricalMeasure) -> Site {
    let big_f = KernelPair::from_params(p).f(x, mu);
    Hamiltonian::new(p).site(x, h, big_f)
}

pub fn h0(params: &ModelParams, p: f64) -> f64 {
    Hamiltonian::new(params).h0(p)
}

pub fn dp_h0(params: &ModelParams, p: f64) -> f64 {
    Hamiltonian::new(params).dp_h0(p)
}

pub fn p0(params: &ModelParams, x: f64, h: f64, mu: &EmpiricalMeasure) -> Threshold {
    Hamiltonian::new(params).p0(&site_of(params, x, h, mu))
}

pub fn s_bar(params: &ModelParams, x: f64, h: f64, mu: &EmpiricalMeasure, p: f64) -> f64 {
    Hamiltonian::new(params).s_bar(&site_of(params, x, h, mu), p)
}

pub fn h1(params: &ModelParams, x: f64, h: f64, mu: &EmpiricalMeasure, p: f64) -> f64 {
    Hamiltonian::new(params).h1(&site_of(params, x, h, mu), p)
}

pub fn dp_h1(params: &ModelParams, x: f64, h: f64, mu: &EmpiricalMeasure, p: f64) -> f64 {
    Hamiltonian::new(params).dp_h1(&site_of(params, x, h, mu), p)
}

pub fn dpp_h1(params: &ModelParams, x: f64, h: f64, mu: &EmpiricalMeasure, p: f64) -> SecondDerivative {
    Hamiltonian::new(params).dpp_h1(&site_of(params, x, h, mu), p)
}

pub fn h1_breakdown(params: &ModelParams, x: f64, h: f64, mu: &EmpiricalMeasure, p: f64) -> H1Breakdown {
    Hamiltonian::new(params).breakdown(&site_of(params, x, h, mu), p)
}

pub fn running_utility(params: &ModelParams, x: f64, h: f64, s: f64, mu: &EmpiricalMeasure) -> f64 {
    Hamiltonian::new(params).utility(&site_of(params, x, h, mu), s)
}

/// Growth envelopes `(g(z), g1(z))` with `|H1| <= g(M)(hp + h^eta)` and
/// `|D_p H1| <= g1(M) h` for `p >= 0`.
///
/// `g` carries the `1/(1-sigma)` factor of the `s = 0` branch and the
/// `L_f^eta` factor from `f(h) <= L_f h`; see [`growth_envelopes_literal`].
pub fn growth_envelopes(p: &ModelParams, z: f64) -> (f64, f64) {
    let r = p.theta_ratio();
    let sig = 1.0 - p.sigma;
    let eta = p.eta();
    let lf = p.l_f();
    let core = p.a_hi().powf(sig) * lf.powf(eta) * (r * z).powf(p.gamma * sig);
    let g = p.zeta.max(core / sig).max((1.0 - p.gamma) * (1.0 - eta) / eta * core).max(lf * r * z - p.zeta);
    (g, growth_g1(p, z))
}

/// The envelope `g` exactly as displayed in the source derivation, without
/// the `1/(1-sigma)` factor; kept for diagnostics.
pub fn growth_envelopes_literal(p: &ModelParams, z: f64) -> (f64, f64) {
    let r = p.theta_ratio();
    let sig = 1.0 - p.sigma;
    let eta = p.eta();
    let core = p.a_hi().powf(sig) * (r * z).powf(p.gamma * sig);
    let g = p.zeta.max(core).max((1.0 - p.gamma) * (1.0 - eta) / eta * core).max(r * z - p.zeta);
    (g, growth_g1(p, z))
}

fn growth_g1(p: &ModelParams, z: f64) -> f64 {
    p.zeta + 2.0 * p.theta_ratio() * z
}

/// Result of the local-Lipschitz probe of `D_p H1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LipschitzProbe {
    pub region_n: f64,
    pub pairs: usize,
    pub max_ratio: f64,
    pub ceiling: f64,
    pub c_x: f64,
    pub c_h: f64,
    pub c_mu: f64,
    pub c_p: f64,
}

/// Lipschitz ceiling of `D_p H1` on the region `1/N < M(mu) <= sqrt(M2) < N`,
/// `h < N`, as the sum of the constants for increments in `x`, `h`, `mu`
/// (in `W`) and `p`.
pub fn dp_h1_lipschitz_ceiling(p: &ModelParams, n: f64) -> (f64, f64, f64, f64) {
    let r = p.theta_ratio();
    let eta = p.eta();
    let alpha = (1.0 - p.gamma * (1.0 - p.sigma)) / (1.0 - eta);
    let beta = (1.0 - p.sigma) / (1.0 - eta);
    let f_max = p.l_f() * n;
    let big_f_max = r * n;
    let th2 = p.theta_lo * p.theta_lo;
    let l_eta = p.l_eta1().max(p.l_eta2());
    let lip_f_x = 2.0 * l_eta * p.theta_hi / th2 * n;
    let lip_f_mu = p.theta_hi / th2 * (n * (p.l_eta1() + p.l_eta2()) + p.theta_hi);
    let dphi_df = 1.0 + (1.0 - alpha).abs();
    let c_h = p.zeta + big_f_max * p.l_f();
    let c_x = dphi_df * f_max * lip_f_x + beta * f_max * big_f_max / p.a_lo() * p.l_a();
    let c_mu = dphi_df * f_max * lip_f_mu;
    let c_p = p.a_lo().powf(p.sigma - 1.0) * f_max.powf(2.0 - eta) * big_f_max.powf(2.0 - p.gamma * (1.0 - p.sigma)) / ((1.0 - eta) * (1.0 - p.gamma));
    (c_x, c_h, c_mu, c_p)
}

/// Samples pairs of tuples in the region for `N = region_n` and reports the
/// largest increment ratio `|Δ D_pH1| / (|Δx| + |Δh| + W1 + |Δp|)` next to the
/// ceiling. Measure increments are rigid translations, for which `W1` is the
/// translation length.
pub fn dp_h1_lipschitz_probe(params: &ModelParams, region_n: f64, pairs: usize, seed: u64) -> LipschitzProbe {
    let ham = Hamiltonian::new(params);
    let kp = KernelPair::from_params(params);
    let key = NoiseKey::new(seed, "lipschitz-probe");
    let n = region_n;
    let mut max_ratio: f64 = 0.0;
    let mut done = 0usize;
    let mut stream = 0u64;
    while done < pairs {
        stream += 1;
        let mut rng = key.generator(stream, 0);
        let mut u = || unit_f64(&mut rng);
        let atoms = 1 + (u() * 8.0) as usize;
        let xs: Vec<f64> = (0..atoms).map(|_| -1.0 + 2.0 * u()).collect();
        let hs: Vec<f64> = (0..atoms).map(|_| u() * n).collect();
        let mu1 = EmpiricalMeasure::uniform(xs, hs).expect("valid cloud");
        let (cx, ch) = ((u() - 0.5) * 0.02, (u() - 0.5) * 0.02);
        let shifted_h: Vec<f64> = mu1.h().iter().map(|h| h + ch).collect();
        if shifted_h.iter().any(|&h| h < 0.0) {
            continue;
        }
        let mu2 = EmpiricalMeasure::uniform(mu1.x().iter().map(|x| x + cx).collect(), shifted_h).expect("valid cloud");
        let in_region = |m: &EmpiricalMeasure| {
            let mm = moment_m(m);
            mm > 1.0 / n && crate::measures::moment_m2(m).sqrt() < n
        };
        if !in_region(&mu1) || !in_region(&mu2) {
            continue;
        }
        let x1 = -1.0 + 2.0 * u();
        let h1v = u() * n;
        let x2 = x1 + (u() - 0.5) * 0.02;
        let h2v = (h1v + (u() - 0.5) * 0.02).clamp(0.0, n * (1.0 - 1e-12));
        let s1 = ham.site(x1, h1v, kp.f(x1, &mu1));
        // Momentum scaled around the threshold so both branches are hit.
        let p_scale = ham.p0(&s1).finite().unwrap_or(1.0);
        let p1 = p_scale * 3.0 * u();
        let p2 = (p1 + (u() - 0.5) * 0.02 * p_scale.max(1e-6)).max(0.0);
        let s2 = ham.site(x2, h2v, kp.f(x2, &mu2));
        let d = (ham.dp_h1(&s1, p1) - ham.dp_h1(&s2, p2)).abs();
        let denom = (x1 - x2).abs() + (h1v - h2v).abs() + (cx * cx + ch * ch).sqrt() + (p1 - p2).abs();
        if denom > 0.0 {
            max_ratio = max_ratio.max(d / denom);
        }
        done += 1;
    }
    let (c_x, c_h, c_mu, c_p) = dp_h1_lipschitz_ceiling(params, n);
    LipschitzProbe { region_n: n, pairs, max_ratio, ceiling: c_x + c_h + c_mu + c_p, c_x, c_h, c_mu, c_p }
}
