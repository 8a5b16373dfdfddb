//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use crackbal::charts::{audit_grid, ellipticity_audit, Windows};
use crackbal::energy::{run_mms, AnisotropyForm, EnergyOptions, EnergyReport, GradientForm, TimeRule};
use crackbal::fields::{w_bound_audit, Intensity, Mms, SingularField};
use crackbal::geom::{CrackPath, Domain, GrowthLaw};
use crackbal::material::{a_factor, TensorField};
use crackbal::quad::{fondlem_table, richardson, tip_flux, TipFluxSetup};
use crackbal::sif::{extract_sif_jump, extract_sif_projection, invariance_audit};
use crackbal::solver::{self, ConstantCoefficients, Discretization, MeshSpec, Newmark, SlitMesh, TransformedProblem};
use crackbal::Result;

// Tolerances of the criteria.
const FONDLEM_RICHARDSON_TOL: f64 = 1e-4;
const TIP_FLUX_REL_TOL: f64 = 2e-2;
const BALANCE_REL_TOL: f64 = 1e-2;
const GRIFFITH_PREDICTION_REL_TOL: f64 = 2e-2;
const ANISOTROPY_TOL: f64 = 1e-12;
const TIP_IDENTITY_TOL: f64 = 1e-10;
const HESS_EXPONENT_MIN: f64 = -0.6;
const SIF_SPREAD_TOL: f64 = 1e-2;
const SIF_AGREEMENT_TOL: f64 = 1e-2;
const MIN_L2_ORDER: f64 = 1.8;
const ENERGY_DRIFT_PER_PERIOD: f64 = 1e-8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn line(text: &str) {
    // Written straight to stdout so the lines survive output capture.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
    let _ = out.flush();
}

fn straight_law(speed: f64) -> GrowthLaw {
    GrowthLaw::linear(0.8, speed, 0.8, 1.0, 0.5)
}

fn unit_box() -> Domain {
    Domain::rectangle([-1.0, -1.0], [1.0, 1.0])
}

fn energy_options(anisotropy: AnisotropyForm) -> EnergyOptions {
    EnergyOptions {
        abs_tol: 1e-7,
        rel_tol: 1e-5,
        max_cells: 40_000,
        time_order: TimeRule::Gauss3,
        gradient: GradientForm::Tensor,
        anisotropy,
    }
}

fn time_grid(t_end: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| t_end * (i as f64 / (n - 1) as f64)).collect()
}

#[allow(clippy::too_many_arguments)]
fn balance_run(
    path: &CrackPath,
    law: &GrowthLaw,
    a: &TensorField,
    eta: f64,
    xi_eps: f64,
    k: f64,
    anisotropy: AnisotropyForm,
) -> Result<EnergyReport> {
    let dom = unit_box();
    let w = Windows::cover(path, law, a, &dom, eta, 0.0, law.t_end)?;
    let mms = Mms::new(w, a, Intensity::constant(k), xi_eps);
    run_mms(&mms, &dom, path, law, &time_grid(law.t_end, 20), &energy_options(anisotropy), BALANCE_REL_TOL)
}

fn criterion_1() -> Result<Outcome> {
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let rows = fondlem_table(|_, _| 1.0, 1.0, |_| 0.0, -1.0, 1.0, &eps)?;
    let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let rich = richardson(&eps, &values)?;
    let err = (rich.limit - PI).abs();
    let bounded = rows.iter().all(|r| r.within_bound);
    Ok(Outcome {
        pass: bounded && err <= FONDLEM_RICHARDSON_TOL,
        detail: format!("all rows within bound: {bounded}; Richardson |L − π| = {err:.2e} (tol {FONDLEM_RICHARDSON_TOL:.0e})"),
    })
}

fn criterion_2() -> Result<Outcome> {
    let setup = TipFluxSetup {
        law: GrowthLaw::linear(0.3, 0.5, 1.0, 1.0, 0.5),
        t: 0.5,
        t_bar: 1.0,
        k: 2.0 / PI.sqrt(),
        zeta: (0.1, 0.2),
    };
    let st = tip_flux(&setup, &[1e-1, 1e-2, 1e-3, 1e-4])?;
    let rel = |v: f64, want: f64| ((v - want) / want).abs();
    let half = 0.5 * st.predicted;
    let errs = [rel(st.total.limit, st.predicted), rel(st.plus.limit, half), rel(st.minus.limit, half)];
    Ok(Outcome {
        pass: errs.iter().all(|&e| e <= TIP_FLUX_REL_TOL),
        detail: format!(
            "limit {:.6} vs {:.6}; halves {:.6}, {:.6} vs {:.6}; max rel err {:.2e}",
            st.total.limit,
            st.predicted,
            st.plus.limit,
            st.minus.limit,
            half,
            errs.iter().copied().fold(0.0, f64::max)
        ),
    })
}

/// Criteria 3 and 4 share the two straight-crack runs.
fn criteria_3_4() -> Result<(Outcome, Outcome)> {
    let path = CrackPath::segment([-1.0, 0.0], 0.0, 2.0);
    let law = straight_law(0.5);
    let a = TensorField::Identity;
    let griffith = balance_run(&path, &law, &a, 0.6, 0.2, 2.0 / PI.sqrt(), AnisotropyForm::Formula)?;
    let unit = balance_run(&path, &law, &a, 0.6, 0.2, 1.0, AnisotropyForm::Formula)?;

    let c3 = Outcome {
        pass: griffith.generalized_holds && unit.generalized_holds,
        detail: format!(
            "max |R| / max E: k = 2/√π {:.2e}, k = 1 {:.2e} (tol {BALANCE_REL_TOL:.0e})",
            griffith.max_r_gen / griffith.max_energy,
            unit.max_r_gen / unit.max_energy
        ),
    };

    // With k = 1 the Griffith residual must equal (1 − π/4)(s(t) − s(0)).
    let worst = unit
        .r_griffith
        .iter()
        .zip(&unit.crack_increment)
        .filter(|(_, &ds)| ds > 0.0)
        .map(|(&r, &ds)| {
            let want = (1.0 - 0.25 * PI) * ds;
            ((r - want) / want).abs()
        })
        .fold(0.0, f64::max);
    let c4 = Outcome {
        pass: griffith.griffith_holds && worst <= GRIFFITH_PREDICTION_REL_TOL,
        detail: format!(
            "k = 2/√π residual / max E {:.2e}; k = 1 residual vs (1 − π/4)Δs worst rel err {worst:.2e}",
            griffith.max_r_griffith / griffith.max_energy
        ),
    };
    Ok((c3, c4))
}

fn criterion_5() -> Result<Vec<(String, Outcome)>> {
    let law = straight_law(0.5);
    let aniso = TensorField::Diagonal { a11: 4.0, a22: 1.0 };
    let horizontal = CrackPath::segment([-1.0, 0.0], 0.0, 2.0);
    let vertical = CrackPath::segment([0.0, -1.0], 0.5 * PI, 2.0);
    let times = time_grid(law.t_end, 7);

    let mut dev: f64 = 0.0;
    for &t in &times {
        let id = a_factor(t, &horizontal, &law, &TensorField::Identity)?;
        dev = dev.max((id - 1.0).abs());
    }
    let mut dev_h: f64 = 0.0;
    let mut dev_v: f64 = 0.0;
    for &t in &times {
        dev_h = dev_h.max((a_factor(t, &horizontal, &law, &aniso)? - 1.0).abs());
        dev_v = dev_v.max((a_factor(t, &vertical, &law, &aniso)? - 4.0).abs());
    }
    let values = Outcome {
        pass: dev == 0.0 && dev_h <= ANISOTROPY_TOL && dev_v <= ANISOTROPY_TOL,
        detail: format!("|a − 1| identity {dev:.1e}; |a − 1| horizontal {dev_h:.1e}; |a − 4| vertical {dev_v:.1e}"),
    };

    let h = balance_run(&horizontal, &law, &aniso, 0.33, 0.1, 2.0 / PI.sqrt(), AnisotropyForm::Formula)?;
    let hb = Outcome {
        pass: h.generalized_holds && h.griffith_holds,
        detail: format!("horizontal, k = 2/√π: max |R_gen|, |R_Griffith| / max E = {:.2e}, {:.2e}", h.max_r_gen / h.max_energy, h.max_r_griffith / h.max_energy),
    };

    let k = 2.0 / (4.0 * PI).sqrt();
    let v = balance_run(&vertical, &law, &aniso, 0.33, 0.1, k, AnisotropyForm::Formula)?;
    let vb = Outcome {
        pass: v.generalized_holds && v.griffith_holds,
        detail: format!(
            "vertical, k = 2/√(4π): max |R_gen|, |R_Griffith| / max E = {:.2e}, {:.2e}",
            v.max_r_gen / v.max_energy,
            v.max_r_griffith / v.max_energy
        ),
    };

    // Diagnostic: the same vertical run closes when the dissipation uses the
    // factor without |A^{1/2}n| (here 2 instead of 4). The dissipation is
    // linear in a, so halving it re-uses the run.
    let r_half: f64 = v
        .r_gen
        .iter()
        .zip(&v.dissipation)
        .map(|(r, d)| (r - 0.5 * d).abs())
        .fold(0.0, f64::max);
    let diag = Outcome {
        pass: r_half <= BALANCE_REL_TOL * v.max_energy,
        detail: format!("diagnostic: vertical run with a = |A^(-1/2)γ'|√det A = 2, max |R_gen| / max E = {:.2e}", r_half / v.max_energy),
    };
    Ok(vec![
        ("5a anisotropy factor values".into(), values),
        ("5b balance, horizontal diag(4,1)".into(), hb),
        ("5c balance, vertical diag(4,1)".into(), vb),
        ("5d vertical with transported factor (diagnostic)".into(), diag),
    ])
}

fn criterion_6() -> Result<Outcome> {
    let path = CrackPath::segment([-1.0, 0.0], 0.0, 2.0);
    let law = straight_law(0.6);
    let dom = unit_box();
    let w = Windows::cover(&path, &law, &TensorField::Identity, &dom, 0.3, 0.0, law.t_end)?;
    let times = time_grid(law.t_end, 20);
    let xs = audit_grid(&dom, path.point(law.s(law.t_end)), 0.1, 50);
    let au = ellipticity_audit(&w, &times, &xs);
    Ok(Outcome {
        pass: au.c4 > 0.0 && au.tip_identity_max <= TIP_IDENTITY_TOL && au.min_det > 0.0,
        detail: format!(
            "min eig A4 = {:.4} over {} times × {} points; max |A4(t,0) − I| = {:.1e}; min det DΦ = {:.3}",
            au.c4,
            times.len(),
            xs.len(),
            au.tip_identity_max,
            au.min_det
        ),
    })
}

fn criterion_7() -> Result<Outcome> {
    let path = CrackPath::arc([-2.0, 0.0], 0.0, 2.0, 3.0, true);
    let law = GrowthLaw::linear(1.0, 0.5, 1.0, 1.0, 0.5);
    let dom = Domain::rectangle([-2.0, -2.0], [2.0, 2.0]);
    let a = TensorField::Identity;
    let w = Windows::cover(&path, &law, &a, &dom, 0.22, 0.0, law.t_end)?;
    let sh = SingularField::new(&path, &law, &a);
    let angles: Vec<f64> = (0..12).map(|i| -3.0 + 6.0 * i as f64 / 11.0).collect();
    let mut worst = f64::INFINITY;
    for t in [0.0, 0.05] {
        let r = w_bound_audit(w.at(t), &sh, t, &angles, 13)?;
        worst = worst.min(r.hess_exponent.unwrap_or(f64::INFINITY));
    }
    Ok(Outcome {
        pass: worst >= HESS_EXPONENT_MIN,
        detail: format!("fitted exponent of |∇²w| on [1e-4, 1e-1]: {worst:.3} (need ≥ {HESS_EXPONENT_MIN})"),
    })
}

fn criterion_8() -> Result<Outcome> {
    // Synthetic field: k Ŝ plus a smooth remainder, for three extractor settings.
    let path = CrackPath::segment([-1.0, 0.0], 0.0, 2.0);
    let law = straight_law(0.5);
    let a = TensorField::Identity;
    let field = SingularField::new(&path, &law, &a);
    let (t, k0) = (0.4, 0.7);
    let u = |x: [f64; 2]| k0 * field.value(t, x).unwrap_or(f64::NAN) + 0.5 + x[1] - 0.3 * x[0] * x[0];
    let synthetic = invariance_audit(
        vec![
            ("jump [1e-3, 1e-2]".into(), extract_sif_jump(u, &field, t, [1e-3, 1e-2], 16)?.k),
            ("projection [0.01, 0.04]".into(), extract_sif_projection(u, &field, t, [0.01, 0.04])?.k),
            ("projection [0.005, 0.02]".into(), extract_sif_projection(u, &field, t, [0.005, 0.02])?.k),
        ],
        SIF_SPREAD_TOL,
    )?;

    // MMS fields on the arc under three chart/cutoff constructions.
    let arc = CrackPath::arc([-2.0, 0.0], 0.0, 2.0, 3.0, true);
    let arc_law = GrowthLaw::linear(1.0, 0.5, 1.0, 1.0, 0.5);
    let dom = Domain::rectangle([-2.0, -2.0], [2.0, 2.0]);
    let arc_field = SingularField::new(&arc, &arc_law, &a);
    let t = 0.3;
    let mut variants = Vec::new();
    let mut agreement: f64 = 0.0;
    for (eta, xi) in [(0.22, 0.07), (0.2, 0.06), (0.16, 0.05)] {
        let w = Windows::cover(&arc, &arc_law, &a, &dom, eta, 0.0, arc_law.t_end)?;
        let mms = Mms::new(w, &a, Intensity::constant(k0), xi);
        let kj = extract_sif_jump(|x| mms.u(t, x), &arc_field, t, [1e-3, 1e-2], 16)?.k;
        let kp = extract_sif_projection(|x| mms.u(t, x), &arc_field, t, [0.005, 0.02])?.k;
        agreement = agreement.max(((kj - kp) / kp).abs());
        variants.push((format!("η = {eta}, ξ ε = {xi}"), kp));
    }
    let mms_audit = invariance_audit(variants, SIF_SPREAD_TOL)?;
    Ok(Outcome {
        pass: synthetic.pass && mms_audit.pass && agreement <= SIF_AGREEMENT_TOL,
        detail: format!(
            "synthetic spread {:.1e}; MMS (arc) spread {:.1e}; jump vs projection {:.1e}",
            synthetic.relative_spread, mms_audit.relative_spread, agreement
        ),
    })
}

fn criterion_9() -> Result<Outcome> {
    let spec = MeshSpec { lo: [-0.5, -0.5], hi: [0.5, 0.5], slit_tip: Some(0.0), h: 0.1, h_tip: 0.02, dirichlet: [false; 4] };
    let mesh = SlitMesh::build(&spec)?;
    let lap = ConstantCoefficients::laplace();
    let n = mesh.n_dofs();

    let (mut nm, mut st) = Newmark::new(Discretization::new(&mesh, &lap), 0.01, 0.0, vec![0.0; n], vec![0.0; n])?;
    for _ in 0..20 {
        st = nm.step(&st)?;
    }
    let zero = st.v.iter().chain(&st.w).all(|&x| x == 0.0);

    // Smooth manufactured mode on the transformed slit rectangle of the
    // straight scenario.
    let path = CrackPath::segment([-1.0, 0.0], 0.0, 2.0);
    let law = straight_law(0.5);
    let w = Windows::cover(&path, &law, &TensorField::Identity, &unit_box(), 0.3, 0.0, law.t_end)?;
    let problem = TransformedProblem::new(&w, &unit_box())?;
    let (_, orders) = solver::standing_mode_study(&problem.mesh_spec(0.1, 0.02), 3, 0.1, problem.t1 - problem.t0)?;
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);

    // Undriven energy over one period of the slowest Neumann mode (period 2 for L = 1).
    let v0 = mesh.interpolant(|p, _| (PI * (p[0] + 0.5)).cos());
    let (mut nm, mut st) = Newmark::new(Discretization::new(&mesh, &lap), 0.01, 0.0, v0, vec![0.0; n])?;
    let e0 = nm.energy(&st);
    for _ in 0..200 {
        st = nm.step(&st)?;
    }
    let drift = ((nm.energy(&st) - e0) / e0).abs();
    Ok(Outcome {
        pass: zero && min_order >= MIN_L2_ORDER && drift <= ENERGY_DRIFT_PER_PERIOD,
        detail: format!("zero data stays zero: {zero}; L² orders {orders:.3?} (need ≥ {MIN_L2_ORDER}); energy drift per period {drift:.1e}"),
    })
}

fn report(name: &str, r: Result<Outcome>, t: Instant, failed: &mut Vec<String>) {
    let secs = t.elapsed().as_secs_f64();
    match r {
        Ok(o) => {
            line(&format!("{} criterion {name}: {} ({secs:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail));
            if !o.pass {
                failed.push(name.to_string());
            }
        }
        Err(e) => {
            line(&format!("FAIL criterion {name}: error: {e} ({secs:.1} s)"));
            failed.push(name.to_string());
        }
    }
}

fn main() {
    let started = Instant::now();
    let mut failed = Vec::new();
    let f = &mut failed;

    let t = Instant::now();
    report("1 layer-integral limit", criterion_1(), t, f);
    let t = Instant::now();
    report("2 tip-flux coefficient", criterion_2(), t, f);
    let t = Instant::now();
    match criteria_3_4() {
        Ok((c3, c4)) => {
            report("3 generalized balance", Ok(c3), t, f);
            report("4 Griffith criterion", Ok(c4), t, f);
        }
        Err(e) => {
            report("3 generalized balance", Err(e), t, f);
            f.push("4 Griffith criterion".into());
        }
    }
    let t = Instant::now();
    match criterion_5() {
        Ok(parts) => {
            for (name, o) in parts {
                report(&name, Ok(o), t, f);
            }
        }
        Err(e) => report("5 anisotropy factor", Err(e), t, f),
    }
    let t = Instant::now();
    report("6 A4 ellipticity audit", criterion_6(), t, f);
    let t = Instant::now();
    report("7 regularity of w on an arc", criterion_7(), t, f);
    let t = Instant::now();
    report("8 SIF invariance", criterion_8(), t, f);
    let t = Instant::now();
    report("9 solver properties", criterion_9(), t, f);

    line(&format!("acceptance: {} failing ({:.1} s total)", failed.len(), started.elapsed().as_secs_f64()));
    if !failed.is_empty() {
        line(&format!("failing: {}", failed.join(", ")));
        std::process::exit(1);
    }
}
