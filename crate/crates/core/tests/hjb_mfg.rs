use std::sync::OnceLock;

use mfg_core::dynamics::horizon_constants;
use mfg_core::hjb::{feedback_policy, HjbGrid, Policy, ValueField};
use mfg_core::interaction::big_f;
use mfg_core::measures::{q_membership, MeasureFlow};
use mfg_core::mfg::{convergence_diagnostics, exploitability, holder_options, psi_map, solve_mfg, ExploitabilityOptions, PsiOutput, Verdict};
use mfg_core::params::{default_scenario, degenerate_scenario, NumericsParams, Scenario};

/// One evaluation of the fixed-point map on the constant flow of the default scenario.
fn default_psi() -> &'static (Scenario, MeasureFlow, PsiOutput) {
    static CELL: OnceLock<(Scenario, MeasureFlow, PsiOutput)> = OnceLock::new();
    CELL.get_or_init(|| {
        let sc = default_scenario();
        let mu0 = sc.mu0();
        let flow = MeasureFlow::constant(&mu0, sc.model.horizon, sc.numerics.n_time);
        let out = psi_map(&flow, &mu0, &sc.model, &sc.numerics).unwrap();
        (sc, flow, out)
    })
}

fn small(n: &NumericsParams) -> NumericsParams {
    let mut n = n.clone();
    n.grid.n_x = 17;
    n.grid.n_y = 33;
    n.n_time = 8;
    n
}

#[test]
fn feedback_controls_are_admissible_everywhere() {
    let (sc, flow, out) = default_psi();
    let fb = feedback_policy(&out.value, flow, &sc.model).unwrap();
    let g = &out.value.grid;
    for k in (0..g.n_t()).step_by(7) {
        let t = g.times[k];
        let mu = flow.measure_at(t);
        for &x in g.xs.iter().step_by(9) {
            for &y in g.ys.iter().step_by(9) {
                let h = y.exp();
                let (v, s) = fb.control(t, x, h, big_f(&sc.model, x, mu));
                assert!(sc.model.control_box.contains(v));
                assert!((0.0..=1.0).contains(&s), "s = {s}");
            }
        }
    }
}

#[test]
fn decreasing_value_in_capital_gives_pure_consumption() {
    let (sc, flow, out) = default_psi();
    let g = out.value.grid.clone();
    let mut w = Vec::with_capacity(g.n_t() * g.n_x() * g.n_y());
    for k in 0..g.n_t() {
        for _ in 0..g.n_x() {
            for &y in &g.ys {
                w.push(if k + 1 == g.n_t() { 0.0 } else { -1e-3 * y });
            }
        }
    }
    let field = ValueField::from_values(g, w, "test", 0.0).unwrap();
    let fb = feedback_policy(&field, flow, &sc.model).unwrap();
    for (x, h) in [(0.0, 0.1), (0.2, 0.01), (-0.3, 0.5)] {
        assert_eq!(fb.control(0.0, x, h, 0.3).1, 0.0);
    }
}

#[test]
fn value_gradients_agree_with_differences_of_the_interpolant() {
    let (_, _, out) = default_psi();
    let f = &out.value;
    let (dx, dy) = (f.grid.dx(), f.grid.dy());
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for &(x, h) in &[(0.013, 0.11), (-0.21, 0.07), (0.17, 0.16), (0.05, 0.045)] {
        let g = f.gradients(0.0, x, h);
        let fd_x = (f.value(0.0, x + dx, h) - f.value(0.0, x - dx, h)) / (2.0 * dx);
        let (hp, hm) = (h * dy.exp(), h * (-dy).exp());
        let fd_h = (f.value(0.0, x, hp) - f.value(0.0, x, hm)) / (hp - hm);
        worst = worst.max((g.dx_v - fd_x).abs()).max((g.dh_v - fd_h).abs() * h);
        scale = scale.max(g.dx_v.abs()).max(g.dh_v.abs() * h);
    }
    assert!(worst <= 0.05 * scale, "{worst} vs {scale}");
}

#[test]
fn one_map_evaluation_stays_in_the_admissible_set() {
    let (sc, _, out) = default_psi();
    let mu0 = sc.mu0();
    let hc = horizon_constants(&mu0, &sc.model);
    let q = q_membership(&out.flow, &mu0, hc.k1, hc.k2, &holder_options(&sc.numerics)).unwrap();
    assert!(q.all_ok(), "{q:?}");
    assert_eq!(out.value.meta.positivity_violations, 0);
    assert_eq!(out.value.meta.monotonicity_violations, 0);
}

#[test]
fn exploitability_detects_a_corrupted_value_field() {
    let (sc, flow, out) = default_psi();
    let mut opts = ExploitabilityOptions::from_numerics(&sc.numerics, vec![(0.0, 0.1), (0.1, 0.07)]);
    opts.mc.paths = 500;
    let clean = exploitability(flow, &out.value, &sc.model, &opts).unwrap();
    assert!(clean.within(3.0, 0.0), "{clean:?}");
    // A unit jump in the value across ln h = -2.5 makes the feedback save
    // everything near the jump.
    let bad = exploitability(flow, &out.value.perturbed(-2.5, 1.0), &sc.model, &opts).unwrap();
    assert!(!bad.within(3.0, 0.0), "{bad:?}");
}

#[test]
fn degenerate_map_is_an_exact_fixed_point() {
    let sc = degenerate_scenario();
    let num = small(&sc.numerics);
    let mu0 = sc.initial.sample(60);
    let start = MeasureFlow::constant(&mu0, sc.model.horizon, num.n_time);
    let once = psi_map(&start, &mu0, &sc.model, &num).unwrap();
    let twice = psi_map(&once.flow, &mu0, &sc.model, &num).unwrap();
    assert_eq!(once.flow, twice.flow);
    assert!(once.value.values().iter().chain(twice.value.values()).all(|&w| w == 0.0));
    assert!(once.flow.measures().iter().all(|m| m.h().iter().all(|&h| h == 0.0)));
}

#[test]
fn convergence_summary_of_degenerate_and_truncated_runs() {
    let sc = degenerate_scenario();
    let num = small(&sc.numerics);
    let sol = solve_mfg(&sc.initial.sample(40), &sc.model, &num).unwrap();
    let s = convergence_diagnostics(&sol.report);
    assert_eq!((s.verdict, s.iterations, s.rate), (Verdict::Converged, 1, None));
    assert!(sol.report.residuals().iter().all(|&r| r == 0.0));

    let sc = default_scenario();
    let mut num = small(&sc.numerics);
    num.n_particles = 200;
    num.max_iter = 1;
    num.tol_fp = 1e-300;
    let sol = solve_mfg(&sc.initial.sample(200), &sc.model, &num).unwrap();
    let s = convergence_diagnostics(&sol.report);
    assert_eq!((s.verdict, s.iterations), (Verdict::NotConverged, 1));
}

#[test]
fn zero_field_has_zero_gradients_everywhere() {
    let sc = default_scenario();
    let field = ValueField::zero(HjbGrid::new(&MeasureFlow::time_grid(0.1, 4), &sc.numerics.grid));
    for (x, h) in [(0.0, 0.0), (0.3, 0.2), (-2.0, 5.0)] {
        let g = field.gradients(0.05, x, h);
        assert_eq!((g.dx_v, g.dh_v), (0.0, 0.0));
    }
}
