//! `mfg`: command-line front end for scenario validation, fixed-point runs
//! and CSV probes of the individual building blocks.
//!
//! Exit codes: 0 ok, 1 I/O, 2 validation or bad arguments, 3 non-convergence,
//! 4 horizon beyond the admissible `T_max`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use mfg_core::dynamics::horizon_constants;
use mfg_core::hamiltonian::Hamiltonian;
use mfg_core::hjb::{feedback_policy, solve_hjb, Policy};
use mfg_core::interaction::KernelPair;
use mfg_core::io::{fmt, read_flow, read_measure, write_flow, write_json, write_value};
use mfg_core::measures::{moment_m, wasserstein1, wasserstein2, EmpiricalMeasure, MeasureFlow};
use mfg_core::mfg::{convergence_diagnostics, exploitability, solve_mfg, ExploitabilityOptions, FixedPointReport, Verdict};
use mfg_core::numeric::linspace;
use mfg_core::params::{default_scenario, Scenario};
use mfg_core::Error;
use sha2::{Digest, Sha256};

#[derive(Parser, Debug)]
#[command(name = "mfg", version, about = "Mean-field game solver: scenario validation, fixed-point runs and CSV probes")]
struct Cli {
    /// Scenario file (`key = value` lines); the built-in default scenario when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (solve-mfg, solve-hjb) or CSV file (probes; stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the scenario's solver seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Checks every parameter invariant and prints the derived constants.
    Validate,
    /// Runs the damped fixed-point iteration and writes a run directory:
    /// flow/, value/, report.json, diagnostics.csv, scenario.cfg, manifest.json.
    SolveMfg {
        /// Also runs the exploitability test and stores it in report.json.
        #[arg(long)]
        exploitability: bool,
    },
    /// Solves the HJB equation against a stored measure flow and writes the
    /// value-field directory to --out.
    SolveHjb {
        /// Flow directory as written by solve-mfg (index.csv plus snapshots).
        #[arg(long)]
        mu_flow_dir: PathBuf,
    },
    /// CSV columns: x,h,p,F,p0,s_bar,H1,dpH1,dppH1,H0,dpH0 over an (h, p) grid at fixed x.
    HamiltonianProbe(HamiltonianArgs),
    /// CSV columns: x,b1,b2,F,M,lower,upper over a sweep of x.
    InteractionSweep(SweepArgs),
    /// CSV with one column `w1` or `w2` and one row: the exact distance between two measure files.
    Wasserstein {
        #[arg(long)]
        mu: PathBuf,
        #[arg(long)]
        nu: PathBuf,
        /// 1 or 2.
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        order: u8,
    },
    /// CSV columns: t,x,y,h,V,DxV,DhV,v_star,s_star at every grid node of one time slice.
    HjbSlice {
        /// Flow to solve against; the constant flow of the initial law when omitted.
        #[arg(long)]
        mu_flow_dir: Option<PathBuf>,
        /// Time of the slice (nearest grid time at or below).
        #[arg(long, default_value_t = 0.0)]
        t: f64,
    },
}

#[derive(Args, Debug)]
struct HamiltonianArgs {
    /// Measure file (x,h[,w]); the scenario's initial law when omitted.
    #[arg(long)]
    mu: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    x: f64,
    /// Capital values, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2,0.5,1")]
    h: Vec<f64>,
    /// Momentum values, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,5,10")]
    p: Vec<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Measure file (x,h[,w]); the scenario's initial law when omitted.
    #[arg(long)]
    mu: Option<PathBuf>,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    x_min: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    x_max: f64,
    #[arg(long, default_value_t = 201)]
    n: usize,
}

/// A failed command: message plus exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => 1,
            Error::Horizon { .. } => 4,
            Error::NonFinite { .. } | Error::LinearSolve(_) => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

type CmdResult = std::result::Result<u8, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MFG_LOG", "warn")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Validate => cmd_validate(cli),
        Command::SolveMfg { exploitability } => cmd_solve_mfg(cli, *exploitability),
        Command::SolveHjb { mu_flow_dir } => cmd_solve_hjb(cli, mu_flow_dir),
        Command::HamiltonianProbe(a) => cmd_hamiltonian_probe(cli, a),
        Command::InteractionSweep(a) => cmd_interaction_sweep(cli, a),
        Command::Wasserstein { mu, nu, order } => cmd_wasserstein(cli, mu, nu, *order),
        Command::HjbSlice { mu_flow_dir, t } => cmd_hjb_slice(cli, mu_flow_dir.as_deref(), *t),
    }
}

fn load_scenario(cli: &Cli) -> std::result::Result<Scenario, Failure> {
    let mut sc = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Scenario::from_config_str(&text)?
        }
        None => default_scenario(),
    };
    if let Some(seed) = cli.seed {
        sc.numerics.seed = seed;
    }
    init_threads(cli.threads.unwrap_or(sc.numerics.threads));
    Ok(sc)
}

fn init_threads(n: usize) {
    if n > 0 {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn emit_csv(cli: &Cli, text: &str) -> std::result::Result<(), Failure> {
    match &cli.out {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e).into()),
        None => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e).into()),
                _ => Ok(()),
            }
        }
    }
}

fn measure_or_initial(path: Option<&Path>, sc: &Scenario) -> std::result::Result<EmpiricalMeasure, Failure> {
    match path {
        Some(p) => Ok(read_measure(p)?),
        None => Ok(sc.mu0()),
    }
}

fn cmd_validate(cli: &Cli) -> CmdResult {
    let sc = load_scenario(cli)?;
    let hc = horizon_constants(&sc.mu0(), &sc.model);
    println!("valid");
    println!("eta = {}", sc.model.eta());
    println!("K1 = {}", hc.k1);
    println!("K2 = {}", hc.k2);
    println!("T_max = {}", hc.t_max);
    println!("horizon = {}", sc.model.horizon);
    Ok(0)
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn diagnostics_csv(report: &FixedPointReport) -> String {
    let mut s = String::from(
        "iteration,residual,step,sup_p2,holder,p2_ok,holder_ok,initial_ok,hjb_positivity_violations,hjb_monotonicity_violations,weighted_gradient_bound,clamped_queries\n",
    );
    for r in &report.records {
        let step = r.step.map(fmt).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            fmt(r.residual),
            step,
            fmt(r.q.sup_p2),
            fmt(r.q.holder),
            r.q.p2_ok,
            r.q.holder_ok,
            r.q.initial_ok,
            r.hjb_positivity_violations,
            r.hjb_monotonicity_violations,
            fmt(r.weighted_gradient_bound),
            r.clamped_queries
        );
    }
    s
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// Exploitability probes: mean position at the capital quartiles, plus one
/// standard deviation to the right at the median.
fn default_probes(mu0: &EmpiricalMeasure) -> Vec<(f64, f64)> {
    let n = mu0.len() as f64;
    let mean = mu0.x().iter().sum::<f64>() / n;
    let sd = (mu0.x().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let mut hs = mu0.h().to_vec();
    hs.sort_by(f64::total_cmp);
    let (q1, q2, q3) = (quantile(&hs, 0.25), quantile(&hs, 0.5), quantile(&hs, 0.75));
    vec![(mean, q1), (mean, q2), (mean, q3), (mean + sd, q2)]
}

fn cmd_solve_mfg(cli: &Cli, with_exploitability: bool) -> CmdResult {
    let out = cli.out.as_ref().ok_or_else(|| usage("solve-mfg needs --out DIR"))?;
    let sc = load_scenario(cli)?;
    let mu0 = sc.mu0();
    let mut sol = solve_mfg(&mu0, &sc.model, &sc.numerics)?;
    let summary = convergence_diagnostics(&sol.report);
    info!("verdict {:?} after {} iterations, rate {:?}", summary.verdict, summary.iterations, summary.rate);
    if with_exploitability {
        let opts = ExploitabilityOptions::from_numerics(&sc.numerics, default_probes(&mu0));
        sol.report.exploitability = Some(exploitability(&sol.flow, &sol.value, &sc.model, &opts)?);
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_flow(&out.join("flow"), &sol.flow)?;
    write_value(&out.join("value"), &sol.value)?;
    write_json(&out.join("report.json"), &sol.report)?;
    let diag = out.join("diagnostics.csv");
    fs::write(&diag, diagnostics_csv(&sol.report)).map_err(|e| Error::io(&diag, e))?;
    let config = sc.to_config_string();
    let cfg = out.join("scenario.cfg");
    fs::write(&cfg, &config).map_err(|e| Error::io(&cfg, e))?;
    let command = if with_exploitability { "solve-mfg --exploitability" } else { "solve-mfg" };
    let manifest = serde_json::json!({
        "command": command,
        "config_sha256": sha256_hex(&config),
        "seed": sc.numerics.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "outputs": ["flow/", "value/", "report.json", "diagnostics.csv", "scenario.cfg"],
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    match sol.report.verdict {
        Verdict::Converged => Ok(0),
        Verdict::NotConverged => {
            eprintln!("not converged: final residual {} > tol_fp {}", sol.report.final_residual(), sol.report.tol_fp);
            Ok(3)
        }
    }
}

fn cmd_solve_hjb(cli: &Cli, flow_dir: &Path) -> CmdResult {
    let out = cli.out.as_ref().ok_or_else(|| usage("solve-hjb needs --out DIR"))?;
    let sc = load_scenario(cli)?;
    let flow = read_flow(flow_dir)?;
    let value = solve_hjb(&flow, &sc.model, &sc.numerics.grid)?;
    write_value(out, &value)?;
    Ok(0)
}

fn cmd_hamiltonian_probe(cli: &Cli, a: &HamiltonianArgs) -> CmdResult {
    let sc = load_scenario(cli)?;
    let mu = measure_or_initial(a.mu.as_deref(), &sc)?;
    let ham = Hamiltonian::new(&sc.model);
    let big_f = KernelPair::from_params(&sc.model).f(a.x, &mu);
    let mut s = String::from("x,h,p,F,p0,s_bar,H1,dpH1,dppH1,H0,dpH0\n");
    for &h in &a.h {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(usage(format!("capital must be finite and >= 0, got {h}")));
        }
        let site = ham.site(a.x, h, big_f);
        let p0 = ham.p0(&site).finite().unwrap_or(f64::INFINITY);
        for &p in &a.p {
            let row = [a.x, h, p, big_f, p0, ham.s_bar(&site, p), ham.h1(&site, p), ham.dp_h1(&site, p), ham.dpp_h1(&site, p).value, ham.h0(p), ham.dp_h0(p)];
            s.push_str(&row.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
    }
    emit_csv(cli, &s)?;
    Ok(0)
}

fn cmd_interaction_sweep(cli: &Cli, a: &SweepArgs) -> CmdResult {
    if a.n < 2 || a.x_min.partial_cmp(&a.x_max) != Some(std::cmp::Ordering::Less) {
        return Err(usage("interaction-sweep needs --n >= 2 and --x-min < --x-max"));
    }
    let sc = load_scenario(cli)?;
    let mu = measure_or_initial(a.mu.as_deref(), &sc)?;
    let kp = KernelPair::from_params(&sc.model);
    let m = moment_m(&mu);
    let r = sc.model.theta_lo / sc.model.theta_hi;
    let mut s = String::from("x,b1,b2,F,M,lower,upper\n");
    for x in linspace(a.x_min, a.x_max, a.n) {
        let (b1, b2) = kp.brackets(&mu, x);
        let row = [x, b1, b2, kp.f(x, &mu), m, r * m, m / r];
        s.push_str(&row.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    emit_csv(cli, &s)?;
    Ok(0)
}

fn cmd_wasserstein(cli: &Cli, mu: &Path, nu: &Path, order: u8) -> CmdResult {
    init_threads(cli.threads.unwrap_or(0));
    let (a, b) = (read_measure(mu)?, read_measure(nu)?);
    let d = if order == 1 { wasserstein1(&a, &b)? } else { wasserstein2(&a, &b)? };
    emit_csv(cli, &format!("w{order}\n{}\n", fmt(d)))?;
    Ok(0)
}

fn cmd_hjb_slice(cli: &Cli, flow_dir: Option<&Path>, t: f64) -> CmdResult {
    let sc = load_scenario(cli)?;
    let flow = match flow_dir {
        Some(dir) => read_flow(dir)?,
        None => MeasureFlow::constant(&sc.mu0(), sc.model.horizon, sc.numerics.n_time),
    };
    if !(t >= flow.times()[0] && t <= flow.horizon()) {
        return Err(usage(format!("--t must lie in [{}, {}]", flow.times()[0], flow.horizon())));
    }
    let value = solve_hjb(&flow, &sc.model, &sc.numerics.grid)?;
    let policy = feedback_policy(&value, &flow, &sc.model)?;
    let kp = KernelPair::from_params(&sc.model);
    let k = flow.index_at(t);
    let tk = flow.times()[k];
    let mu = flow.measure(k);
    let g = &value.grid;
    let mut s = String::from("t,x,y,h,V,DxV,DhV,v_star,s_star\n");
    for &x in &g.xs {
        let big_f = kp.f(x, mu);
        for &y in &g.ys {
            let h = y.exp();
            let grad = value.gradients_at_step(k, x, h);
            let (v, sv) = policy.control(tk, x, h, big_f);
            let row = [tk, x, y, h, value.value(tk, x, h), grad.dx_v, grad.dh_v, v, sv];
            s.push_str(&row.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
    }
    emit_csv(cli, &s)?;
    Ok(0)
}
