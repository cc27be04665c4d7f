//! Exact discrete optimal transport.
//!
//! Equal-size uniform measures go through the Hungarian algorithm; anything
//! else is solved as a transportation problem by successive shortest paths
//! with Dijkstra and node potentials.

use super::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::numeric::Neumaier;

/// Largest combined support (atoms of both measures) solved exactly.
pub const EXACT_SUPPORT_CAP: usize = 512;

/// Exact `W2` with squared Euclidean ground cost on `(x, h)`.
pub fn wasserstein2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    let c = ot_cost(mu, nu, |dx, dh| dx * dx + dh * dh)?;
    Ok(c.max(0.0).sqrt())
}

/// Exact `W1` with Euclidean ground cost on `(x, h)`.
pub fn wasserstein1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    ot_cost(mu, nu, |dx, dh| (dx * dx + dh * dh).sqrt())
}

fn ot_cost(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, ground: impl Fn(f64, f64) -> f64) -> Result<f64> {
    let size = mu.len() + nu.len();
    if size > EXACT_SUPPORT_CAP {
        return Err(Error::SupportTooLarge { size, cap: EXACT_SUPPORT_CAP });
    }
    let (n, m) = (mu.len(), nu.len());
    let mut cost = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            cost[i * m + j] = ground(mu.x()[i] - nu.x()[j], mu.h()[i] - nu.h()[j]);
        }
    }
    if n == m && mu.is_uniform() && nu.is_uniform() {
        let assign = hungarian(&cost, n);
        return Ok(assignment_cost(&cost, n, &assign) / n as f64);
    }
    Ok(transportation(mu.weights(), nu.weights(), &cost))
}

/// Sum of `cost[i][assign[i]]` in row order.
pub fn assignment_cost(cost: &[f64], n: usize, assign: &[usize]) -> f64 {
    let mut acc = Neumaier::new();
    for (i, &j) in assign.iter().enumerate() {
        acc.add(cost[i * n + j]);
    }
    acc.value()
}

/// Minimum-cost perfect assignment of an `n x n` row-major cost matrix.
/// Returns the column assigned to each row.
pub(crate) fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // Shortest augmenting path formulation with 1-based sentinel column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            let row = &cost[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Optimal transport cost between weight vectors `a` (rows) and `b`
/// (columns) for a row-major `cost`, by successive shortest paths.
pub(crate) fn transportation(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    const TOL: f64 = 1e-15;
    let (n, m) = (a.len(), b.len());
    let v_count = n + m;
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![0.0; n * m];
    let mut pot = vec![0.0; v_count];
    let mut dist = vec![f64::INFINITY; v_count];
    let mut prev = vec![usize::MAX; v_count];
    let mut done = vec![false; v_count];
    let max_rounds = 4 * v_count * v_count + 16;
    for _ in 0..max_rounds {
        if supply.iter().all(|&s| s <= TOL) || demand.iter().all(|&d| d <= TOL) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for i in 0..n {
            if supply[i] > TOL {
                dist[i] = 0.0;
            }
        }
        // Dense Dijkstra on reduced costs.
        loop {
            let mut best = usize::MAX;
            let mut bd = f64::INFINITY;
            for v in 0..v_count {
                if !done[v] && dist[v] < bd {
                    bd = dist[v];
                    best = v;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best < n {
                let i = best;
                for j in 0..m {
                    let node = n + j;
                    if done[node] {
                        continue;
                    }
                    let rc = (cost[i * m + j] + pot[i] - pot[node]).max(0.0);
                    if bd + rc < dist[node] {
                        dist[node] = bd + rc;
                        prev[node] = i;
                    }
                }
            } else {
                let j = best - n;
                for i in 0..n {
                    if done[i] || flow[i * m + j] <= TOL {
                        continue;
                    }
                    let rc = (-cost[i * m + j] + pot[best] - pot[i]).max(0.0);
                    if bd + rc < dist[i] {
                        dist[i] = bd + rc;
                        prev[i] = best;
                    }
                }
            }
        }
        // Closest column with remaining demand in true path cost.
        let mut sink = usize::MAX;
        let mut sd = f64::INFINITY;
        for (j, &dj) in demand.iter().enumerate() {
            let node = n + j;
            if dj > TOL && dist[node].is_finite() && dist[node] + pot[node] < sd {
                sd = dist[node] + pot[node];
                sink = node;
            }
        }
        if sink == usize::MAX {
            break;
        }
        let max_d = dist.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max);
        for v in 0..v_count {
            pot[v] += if dist[v].is_finite() { dist[v] } else { max_d };
        }
        // Bottleneck along the path.
        let mut amount = demand[sink - n];
        let mut node = sink;
        while prev[node] != usize::MAX {
            let p = prev[node];
            if node < n {
                // Backward edge column p -> row node.
                amount = amount.min(flow[node * m + (p - n)]);
            }
            node = p;
        }
        amount = amount.min(supply[node]);
        let source = node;
        let mut node = sink;
        while prev[node] != usize::MAX {
            let p = prev[node];
            if node >= n {
                flow[p * m + (node - n)] += amount;
            } else {
                flow[node * m + (p - n)] -= amount;
            }
            node = p;
        }
        supply[source] -= amount;
        demand[sink - n] -= amount;
    }
    let mut acc = Neumaier::new();
    for (f, c) in flow.iter().zip(cost) {
        if *f > 0.0 {
            acc.add(f * c);
        }
    }
    acc.value()
}
