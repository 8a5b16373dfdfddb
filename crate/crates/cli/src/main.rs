//! `crackbal`: scenario validation, audits, balance runs and the wave solver.
//!
//! Exit codes: 0 pass, 1 validation, 2 audit, 3 balance, 4 solver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crackbal::charts::{self, Windows};
use crackbal::energy::{self, AnisotropyForm};
use crackbal::fields;
use crackbal::geom::{GrowthLaw, ValidationOptions};
use crackbal::io::{Manifest, OutDir};
use crackbal::quad::{self, TipFluxSetup};
use crackbal::scenario::{KMode, Scenario};
use crackbal::sif;
use crackbal::solver::{self, Pullback, TransformedProblem};

#[derive(Parser)]
#[command(name = "crackbal", version, about = "Energy balance and stress-intensity verification for moving anti-plane cracks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory.
    #[arg(long, global = true, default_value = "crackbal-out")]
    out: PathBuf,
    /// Seed recorded in the manifest.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions of a scenario.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run one audit and write its tables.
    Audit {
        #[arg(value_enum)]
        which: AuditKind,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        tol: Option<f64>,
        /// Comma-separated ε values.
        #[arg(long, value_delimiter = ',')]
        eps_seq: Option<Vec<f64>>,
        /// Spatial samples per direction (ellipticity) or radii (wbound).
        #[arg(long)]
        grid: Option<usize>,
        /// Time samples.
        #[arg(long)]
        times: Option<usize>,
    },
    /// Energy balance of the manufactured solution over the whole horizon.
    Balance {
        #[arg(long)]
        scenario: PathBuf,
        /// griffith, custom or constant:<k>.
        #[arg(long, default_value = "griffith")]
        k_mode: String,
        #[arg(long)]
        tol: Option<f64>,
        /// Arc-length window behind the tip for the SIF jump fit, `a,b`.
        #[arg(long, value_delimiter = ',')]
        window: Option<Vec<f64>>,
    },
    /// Finite-element run on the transformed domain.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "singular")]
        case: SolveCase,
        #[arg(long, default_value = "griffith")]
        k_mode: String,
        /// Mesh levels.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditKind {
    Ellipticity,
    Fondlem,
    Tipflux,
    Wbound,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveCase {
    /// Zero data: every trace must vanish.
    Zero,
    /// Standing mode with h-halving; reports observed orders.
    Smooth,
    /// Manufactured singular field; SIF stability under refinement.
    Singular,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Code<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

const VALIDATION: u8 = 1;
const AUDIT: u8 = 2;
const BALANCE: u8 = 3;
const SOLVER: u8 = 4;

fn main() -> ExitCode {
    if let Ok(n) = std::env::var("CRACKBAL_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: CRACKBAL_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(VALIDATION);
            }
        }
    }
    // Usage errors map to the validation code; clap's default 2 is the audit code.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Validate { scenario } => validate(&cli, scenario),
        Command::Audit { which, scenario, tol, eps_seq, grid, times } => {
            audit(&cli, *which, scenario.as_ref(), *tol, eps_seq.as_deref(), *grid, *times)
        }
        Command::Balance { scenario, k_mode, tol, window } => balance(&cli, scenario, k_mode, *tol, window.as_deref()),
        Command::Solve { scenario, case, k_mode, grid, tol } => solve(&cli, scenario, *case, k_mode, *grid, *tol),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path).code(VALIDATION)
}

fn manifest(cli: &Cli, command: &str, scenario: Option<&Scenario>) -> Manifest {
    let mut m = Manifest::new(command, cli.seed);
    if let Some(s) = scenario {
        m.scenario = Some(s.to_toml());
        m.eta = Some(s.options.eta);
    }
    m
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn validate(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let s = load(path)?;
    let d = s.validate(&ValidationOptions::default()).code(VALIDATION)?;
    let mut out = OutDir::create(&cli.out).code(VALIDATION)?;
    out.json("validation.json", &d).code(VALIDATION)?;
    println!("speed margin       {:.6e} (max ṡ = {:.6})", d.speed_margin, d.max_speed);
    println!("ellipticity margin {:.6e}", d.ellipticity_margin);
    println!("endpoint distances {:.3e}, {:.3e}", d.endpoint_distances[0], d.endpoint_distances[1]);
    println!("min tip distance   {:.6}", d.min_tip_boundary_distance);
    for f in &d.failures {
        println!("violation: {f}");
    }
    let mut m = manifest(cli, "validate", Some(&s));
    m.pass = d.pass;
    out.finish(m).code(VALIDATION)?;
    println!("{}", verdict(d.pass));
    if d.pass {
        Ok(())
    } else {
        Err(anyhow!("{} violation(s)", d.failures.len())).code(VALIDATION)
    }
}

fn audit(
    cli: &Cli,
    which: AuditKind,
    scenario: Option<&PathBuf>,
    tol: Option<f64>,
    eps_seq: Option<&[f64]>,
    grid: Option<usize>,
    times: Option<usize>,
) -> Result<(), Failure> {
    let scenario = scenario.map(|p| load(p)).transpose()?;
    let need = || scenario.as_ref().ok_or_else(|| anyhow!("this audit needs --scenario")).code(VALIDATION);
    let mut out = OutDir::create(&cli.out).code(AUDIT)?;
    let mut m = manifest(cli, "audit", scenario.as_ref());
    let eps: Vec<f64> = eps_seq.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3, 1e-4]);
    let (pass, summary) = match which {
        AuditKind::Fondlem => {
            let tol = tol.unwrap_or(1e-4);
            let rows = quad::fondlem_table(|_, _| 1.0, 1.0, |_| 0.0, -1.0, 1.0, &eps).code(AUDIT)?;
            let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
            let rich = quad::richardson(&eps, &values).code(AUDIT)?;
            let limit_error = (rich.limit - std::f64::consts::PI).abs();
            let pass = rows.iter().all(|r| r.within_bound) && limit_error <= tol;
            out.csv("fondlem.csv", &rows).code(AUDIT)?;
            out.json("fondlem.json", &json!({ "rows": rows, "richardson": rich, "limit_error": limit_error, "tol": tol, "pass": pass }))
                .code(AUDIT)?;
            m.tolerances = json!({ "richardson": tol });
            let worst = rows.iter().max_by(|a, b| (a.deviation / a.bound).total_cmp(&(b.deviation / b.bound)));
            (pass, format!("Richardson limit {:.10} (|error| {limit_error:.3e}); worst row {worst:?}", rich.limit))
        }
        AuditKind::Tipflux => {
            let tol = tol.unwrap_or(2e-2);
            let law = scenario.as_ref().map(|s| s.law.clone()).unwrap_or_else(|| GrowthLaw::linear(0.3, 0.5, 1.0, 1.0, 0.5));
            let k = match &scenario {
                Some(s) => s.intensity(KMode::Griffith).code(AUDIT)?.at(0.5 * law.t_end),
                None => 2.0 / std::f64::consts::PI.sqrt(),
            };
            let setup = TipFluxSetup { t: 0.5 * law.t_end, t_bar: law.t_end, law, k, zeta: (0.1, 0.2) };
            let st = quad::tip_flux(&setup, &eps).code(AUDIT)?;
            let rel = |v: f64, p: f64| (v - p).abs() / p.abs();
            let errs = [rel(st.total.limit, st.predicted), rel(st.plus.limit, 0.5 * st.predicted), rel(st.minus.limit, 0.5 * st.predicted)];
            let pass = errs.iter().all(|&e| e <= tol);
            out.csv("tipflux.csv", &st.rows).code(AUDIT)?;
            out.json("tipflux.json", &json!({ "study": st, "relative_errors": errs, "tol": tol, "pass": pass })).code(AUDIT)?;
            m.tolerances = json!({ "relative": tol });
            (pass, format!("limit {:.6} vs {:.6}; relative errors total {:.3e}, plus {:.3e}, minus {:.3e}", st.total.limit, st.predicted, errs[0], errs[1], errs[2]))
        }
        AuditKind::Ellipticity => {
            let s = need()?;
            let w = s.windows().code(AUDIT)?;
            let t = s.times();
            let n_t = times.unwrap_or(t.len());
            let t = linspace(t[0], t[t.len() - 1], n_t);
            let path = s.crack().code(AUDIT)?;
            let tip = path.point(s.law.s(t[t.len() / 2]));
            let xs = charts::audit_grid(&s.domain, tip, 0.1, grid.unwrap_or(50));
            let a = charts::ellipticity_audit(&w, &t, &xs);
            out.csv("ellipticity.csv", &a.rows.iter().map(|r| AuditCsv::from(*r)).collect::<Vec<_>>()).code(AUDIT)?;
            out.json("ellipticity.json", &a).code(AUDIT)?;
            m.windows = w.ends.clone();
            m.tolerances = json!({ "tip_identity": 1e-10 });
            let worst = a.rows.iter().min_by(|x, y| x.min_eigenvalue.total_cmp(&y.min_eigenvalue));
            (a.pass, format!("c4 = {:.6e}, max |A4(t,0) − I| = {:.3e}, ρ = {:.4}; worst {worst:?}", a.c4, a.tip_identity_max, a.rho))
        }
        AuditKind::Wbound => {
            let s = need()?;
            let w = s.windows().code(AUDIT)?;
            let shat = s.singular_field().code(AUDIT)?;
            let angles: Vec<f64> = (0..12).map(|i| -3.0 + 6.0 * i as f64 / 11.0).collect();
            let n_t = times.unwrap_or(3);
            let t = s.times();
            let ts = linspace(t[0], t[t.len() - 1], n_t);
            if 0.5 * s.options.eta < 0.1 {
                eprintln!("note: radii above η/2 = {} leave the plateau of k_η and distort the fit", 0.5 * s.options.eta);
            }
            let mut audits = Vec::new();
            let mut rows = Vec::new();
            for &ti in &ts {
                let a = fields::w_bound_audit(w.at(ti), &shat, ti, &angles, grid.unwrap_or(13)).code(AUDIT)?;
                for (i, r) in a.radii.iter().enumerate() {
                    rows.push(WRow { t: ti, radius: *r, hess_max: a.hess_max[i], value_max: a.value_max[i] });
                }
                audits.push(a);
            }
            let pass = audits.iter().all(|a| a.pass);
            out.csv("wbound.csv", &rows).code(AUDIT)?;
            out.json("wbound.json", &audits).code(AUDIT)?;
            m.windows = w.ends.clone();
            m.tolerances = json!({ "hess_exponent_min": -0.6, "value_exponent_min": 1.4 });
            let worst = audits.iter().filter_map(|a| a.hess_exponent).fold(f64::INFINITY, f64::min);
            (pass, format!("smallest |∇²w| exponent {worst:.4}"))
        }
    };
    m.pass = pass;
    out.finish(m).code(AUDIT)?;
    println!("{summary}");
    println!("{}", verdict(pass));
    if pass {
        Ok(())
    } else {
        Err(anyhow!("audit failed: {summary}")).code(AUDIT)
    }
}

/// `n` points from `a` to `b`; the last one is `b` exactly.
fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![a];
    }
    (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * (i as f64 / (n - 1) as f64) }).collect()
}

#[derive(serde::Serialize)]
struct AuditCsv {
    t: f64,
    min_eigenvalue: f64,
    worst_x1: f64,
    worst_x2: f64,
    tip_identity_residual: f64,
    min_det: f64,
}

impl From<charts::AuditRow> for AuditCsv {
    fn from(r: charts::AuditRow) -> Self {
        AuditCsv {
            t: r.t,
            min_eigenvalue: r.min_eigenvalue,
            worst_x1: r.worst_x[0],
            worst_x2: r.worst_x[1],
            tip_identity_residual: r.tip_identity_residual,
            min_det: r.min_det,
        }
    }
}

#[derive(serde::Serialize)]
struct WRow {
    t: f64,
    radius: f64,
    hess_max: f64,
    value_max: f64,
}

#[derive(serde::Serialize)]
struct SifCsv {
    t: f64,
    k_jump: f64,
    k_proj: f64,
    residual_jump: f64,
    residual_proj: f64,
}

#[derive(serde::Serialize)]
struct EnergyRow {
    t: f64,
    energy: f64,
    energy_plain: f64,
    dissipation: f64,
    work: f64,
    crack_increment: f64,
    r_gen: f64,
    r_griffith: f64,
}

fn balance(cli: &Cli, path: &Path, k_mode: &str, tol: Option<f64>, window: Option<&[f64]>) -> Result<(), Failure> {
    let s = load(path)?;
    let mode: KMode = k_mode.parse().code(VALIDATION)?;
    let mms = s.mms(mode).code(BALANCE)?;
    if !s.xi_inside_plateau() {
        eprintln!(
            "note: xi_eps·√2 = {:.3} exceeds eta/2 = {:.3}; the forcing is discontinuous inside the support and quadrature will be slow",
            s.options.xi_eps * std::f64::consts::SQRT_2,
            0.5 * s.options.eta
        );
    }
    let crack = s.crack().code(BALANCE)?;
    let times = s.times();
    let tol = tol.unwrap_or(s.options.balance_tol);
    let rep = energy::run_mms(&mms, &s.domain, &crack, &s.law, &times, &s.energy_options(), tol).code(BALANCE)?;
    let field = s.singular_field().code(BALANCE)?;
    let win = match window {
        Some([a, b]) => [*a, *b],
        Some(_) => return Err(anyhow!("--window takes two values a,b")).code(VALIDATION),
        None => s.options.sif_window,
    };
    let sif_times: Vec<f64> = times.iter().step_by((times.len() / 5).max(1)).copied().collect();
    let trace = sif::sif_trace(|t, x| mms.u(t, x), &field, &sif_times, win, s.options.sif_annulus).code(BALANCE)?;
    let griffith = matches!(mode, KMode::Griffith);
    let final_r = *rep.r_griffith.last().unwrap_or(&0.0);
    // With k away from the Griffith value the Griffith residual is expected to
    // fail by a predictable amount.
    let expected_failure = !griffith
        && !rep.griffith_holds
        && rep.predicted_griffith.is_some_and(|p| p != 0.0 && ((final_r - p) / p).abs() <= 2e-2);
    let pass = rep.generalized_holds && (rep.griffith_holds || expected_failure);
    let rows: Vec<EnergyRow> = (0..times.len())
        .map(|i| EnergyRow {
            t: rep.times[i],
            energy: rep.energy[i],
            energy_plain: rep.energy_plain[i],
            dissipation: rep.dissipation[i],
            work: rep.work[i],
            crack_increment: rep.crack_increment[i],
            r_gen: rep.r_gen[i],
            r_griffith: rep.r_griffith[i],
        })
        .collect();
    let mut out = OutDir::create(&cli.out).code(BALANCE)?;
    out.csv("energy.csv", &rows).code(BALANCE)?;
    let sif_rows: Vec<SifCsv> = trace
        .rows
        .iter()
        .map(|r| SifCsv { t: r.t, k_jump: r.k_jump, k_proj: r.k_proj, residual_jump: r.residual_jump, residual_proj: r.residual_proj })
        .collect();
    out.csv("sif.csv", &sif_rows).code(BALANCE)?;
    out.json(
        "energy.json",
        &json!({
            "report": rep,
            "k_mode": mode,
            "expected_failure": expected_failure,
            "sif": trace,
            "anisotropy": (0..times.len()).map(|i| energy::anisotropy(s.options.anisotropy, times[i], &crack, &s.law, &s.material).ok()).collect::<Vec<_>>(),
        }),
    )
    .code(BALANCE)?;
    let mut m = manifest(cli, "balance", Some(&s));
    m.windows = mms.windows.ends.clone();
    m.tolerances = json!({ "balance_rel": tol, "quad_abs": s.options.quad_abs_tol, "quad_rel": s.options.quad_rel_tol });
    m.pass = pass;
    out.finish(m).code(BALANCE)?;
    println!("max E {:.6e}; tolerance {:.3e}", rep.max_energy, rep.tol);
    println!("generalized balance: max |R| = {:.3e} {}", rep.max_r_gen, verdict(rep.generalized_holds));
    println!("Griffith balance:    max |R| = {:.3e} {}", rep.max_r_griffith, verdict(rep.griffith_holds));
    if expected_failure {
        println!(
            "Griffith residual {final_r:.6e} matches the predicted Δs(1 − πk²a/4) = {:.6e} (expected failure for this k)",
            rep.predicted_griffith.unwrap_or(f64::NAN)
        );
    }
    if s.options.anisotropy == AnisotropyForm::Formula && !s.material.is_identity() {
        eprintln!("note: anisotropy factor taken as |A^(-1/2)γ'||A^(1/2)n|√det A; see docs/formats.md");
    }
    println!("{}", verdict(pass));
    if pass {
        Ok(())
    } else {
        Err(anyhow!("energy balance does not close within {tol:.3e}")).code(BALANCE)
    }
}

#[derive(serde::Serialize)]
struct SolveEnergyRow {
    level: usize,
    t: f64,
    discrete: f64,
    physical: f64,
    l2_error: f64,
}

#[derive(serde::Serialize)]
struct SifLevel {
    level: usize,
    h: f64,
    h_tip: f64,
    dofs: usize,
    t: f64,
    k: f64,
    k_exact: f64,
    residual: f64,
}

fn solve(cli: &Cli, path: &Path, case: SolveCase, k_mode: &str, grid: Option<usize>, tol: Option<f64>) -> Result<(), Failure> {
    let s = load(path)?;
    let windows: Windows = s.windows().code(SOLVER)?;
    let problem = TransformedProblem::new(&windows, &s.domain).code(SOLVER)?;
    let o = &s.solver;
    let steps = o.steps.unwrap_or(((problem.t1 - problem.t0) / o.dt + 1e-9).floor() as usize);
    let levels = grid.unwrap_or(o.levels).max(1);
    let mut out = OutDir::create(&cli.out).code(SOLVER)?;
    let mut m = manifest(cli, "solve", Some(&s));
    m.windows = vec![problem.t1];
    let (pass, summary) = match case {
        SolveCase::Zero => {
            let spec = problem.mesh_spec(o.h, o.h_tip);
            let mesh = solver::SlitMesh::build(&spec).code(SOLVER)?;
            let coeffs = solver::PipelineCoefficients { pipeline: problem.pipeline.clone(), f: None };
            let disc = solver::Discretization::new(&mesh, &coeffs);
            let n = mesh.n_dofs();
            let (mut nm, mut st) = solver::Newmark::new(disc, o.dt, problem.t0, vec![0.0; n], vec![0.0; n]).code(SOLVER)?;
            let mut rows = Vec::new();
            let mut max_abs: f64 = 0.0;
            for i in 0..=steps {
                if i > 0 {
                    st = nm.step(&st).code(SOLVER)?;
                }
                max_abs = st.v.iter().chain(&st.w).map(|v| v.abs()).fold(max_abs, f64::max);
                let e = nm.energy(&st);
                let pe = solver::physical_energy(&mesh, &problem.pipeline, &st).code(SOLVER)?;
                rows.push(SolveEnergyRow { level: 0, t: st.t, discrete: e, physical: pe, l2_error: 0.0 });
            }
            out.csv("energy.csv", &rows).code(SOLVER)?;
            out.text("mesh.txt", &mesh.to_text()).code(SOLVER)?;
            out.text("snapshot_final.csv", &solver::snapshot_csv(&mesh, &st)).code(SOLVER)?;
            (max_abs == 0.0, format!("max |v|, |v̇| over {steps} steps: {max_abs:e}"))
        }
        SolveCase::Smooth => {
            let tol = tol.unwrap_or(1.8);
            let spec = problem.mesh_spec(o.h, o.h_tip);
            let t_end = problem.t1 - problem.t0;
            let (rows, orders) = solver::standing_mode_study(&spec, levels.max(2), o.dt / o.h, t_end).code(SOLVER)?;
            let pass = orders.iter().all(|&p| p >= tol);
            out.csv("convergence.csv", &rows).code(SOLVER)?;
            out.json("convergence.json", &json!({ "rows": rows, "orders": orders, "min_order": tol, "pass": pass })).code(SOLVER)?;
            m.tolerances = json!({ "min_order": tol });
            (pass, format!("observed orders {orders:.3?}"))
        }
        SolveCase::Singular => {
            let tol = tol.unwrap_or(5e-2);
            if o.sif_annulus[1] > 0.5 * s.options.xi_eps {
                return Err(anyhow!(
                    "solver.sif_annulus outer radius {} exceeds the cutoff plateau xi_eps/2 = {}",
                    o.sif_annulus[1],
                    0.5 * s.options.xi_eps
                ))
                .code(VALIDATION);
            }
            let mode: KMode = k_mode.parse().code(VALIDATION)?;
            let mms = s.mms(mode).code(SOLVER)?;
            let field = s.singular_field().code(SOLVER)?;
            let mut energy_rows = Vec::new();
            let mut sif_rows = Vec::new();
            for level in 0..levels {
                let f = 0.5f64.powi(level as i32);
                let spec = problem.mesh_spec(o.h * f, o.h_tip * f);
                let dt = o.dt * f;
                let run = solver::solve_mms(&mms, &problem, &spec, dt, steps << level, o.snapshot_every << level).code(SOLVER)?;
                for (st, (e, l2)) in run.states.iter().zip(run.discrete_energy.iter().zip(&run.l2_error)) {
                    let pe = solver::physical_energy(&run.mesh, &problem.pipeline, st).code(SOLVER)?;
                    energy_rows.push(SolveEnergyRow { level, t: st.t, discrete: *e, physical: pe, l2_error: *l2 });
                }
                let last = run.states.last().expect("at least one state");
                let pb = Pullback { mesh: &run.mesh, pipeline: &problem.pipeline, state: last };
                let est = sif::extract_sif_projection(|x| pb.eval(x).map_or(f64::NAN, |v| v.u), &field, last.t, o.sif_annulus)
                    .code(SOLVER)?;
                sif_rows.push(SifLevel {
                    level,
                    h: spec.h,
                    h_tip: spec.h_tip,
                    dofs: run.mesh.n_dofs(),
                    t: last.t,
                    k: est.k,
                    k_exact: mms.k.at(last.t),
                    residual: est.residual,
                });
                if level + 1 == levels {
                    out.text("mesh.txt", &run.mesh.to_text()).code(SOLVER)?;
                    out.text("snapshot_final.csv", &solver::snapshot_csv(&run.mesh, last)).code(SOLVER)?;
                }
            }
            let spread = match sif_rows.as_slice() {
                [.., a, b] => (a.k - b.k).abs() / b.k.abs().max(1e-300),
                _ => 0.0,
            };
            let pass = levels >= 2 && spread <= tol;
            out.csv("energy.csv", &energy_rows).code(SOLVER)?;
            out.csv("sif.csv", &sif_rows).code(SOLVER)?;
            out.json("sif.json", &json!({ "levels": sif_rows, "spread": spread, "tol": tol, "pass": pass })).code(SOLVER)?;
            m.tolerances = json!({ "sif_spread": tol });
            (pass, format!("SIF per level {:?}; spread between the two finest {spread:.3e}", sif_rows.iter().map(|r| r.k).collect::<Vec<_>>()))
        }
    };
    m.pass = pass;
    out.finish(m).code(SOLVER)?;
    println!("{summary}");
    println!("{}", verdict(pass));
    if pass {
        Ok(())
    } else {
        Err(anyhow!("solver check failed: {summary}")).context("solve").code(SOLVER)
    }
}
