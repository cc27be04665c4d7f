//! Small numerical helpers: compensated summation, grids and tridiagonal solves.

/// Neumaier-compensated accumulator. Summation order is the caller's order,
/// so results are reproducible bit for bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn neumaier_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut acc = Neumaier::new();
    for v in it {
        acc.add(v);
    }
    acc.value()
}

/// `n` equally spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let d = (b - a) / (n - 1) as f64;
            (0..n).map(|i| if i + 1 == n { b } else { a + d * i as f64 }).collect()
        }
    }
}

/// Solves a tridiagonal system in place with the Thomas algorithm.
/// `lower[0]` and `upper[n-1]` are ignored. Returns `None` on a zero pivot.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut Vec<f64>) -> Option<()> {
    let n = diag.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let mut beta = diag[0];
    if beta == 0.0 {
        return None;
    }
    rhs[0] /= beta;
    for i in 1..n {
        scratch[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * scratch[i];
        if beta == 0.0 || !beta.is_finite() {
            return None;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i + 1] * rhs[i + 1];
    }
    Some(())
}

/// Locates `v` in a uniform grid starting at `lo` with spacing `d` and `n`
/// nodes. Returns the left cell index, the fractional offset in `[0,1]` and
/// whether `v` had to be clamped into the grid.
#[inline]
pub fn locate_uniform(v: f64, lo: f64, d: f64, n: usize) -> (usize, f64, bool) {
    let s = (v - lo) / d;
    let max = (n - 1) as f64;
    if s.is_nan() {
        return (0, 0.0, true);
    }
    if s <= 0.0 {
        return (0, 0.0, s < 0.0);
    }
    if s >= max {
        return (n - 2, 1.0, s > max);
    }
    let i = (s.floor() as usize).min(n - 2);
    (i, s - i as f64, false)
}
