//! Energy `E(t)`, dissipation `D(t)`, external work `W(t)` and the balance
//! residuals for manufactured displacements.

use rayon::prelude::*;
use serde::Serialize;

use crate::dual::{self, matvec};
use crate::error::{Error, Result};
use crate::fields::{Cutoff, Intensity, Mms};
use crate::geom::{CrackPath, Domain, GrowthLaw};
use crate::material::{self, TensorField};
use crate::quad::gk::{self, QuadOptions, QuadResult};
use crate::quad::{clip_halfplane, integrate_cracked, Region, Slit, SlitQuadrature};

pub const SCHEMA_VERSION: u32 = 1;

/// Which elastic energy density enters `E`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientForm {
    /// `A∇u·∇u`
    Tensor,
    /// `|∇u|²`
    Plain,
}

/// Which anisotropy factor multiplies the dissipation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnisotropyForm {
    /// `|A^{-1/2}γ'| |A^{1/2}n| √det A`
    Formula,
    /// `|A^{-1/2}γ'| √det A`, the factor the transported tube computation yields.
    Transported,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_cells: usize,
    /// Gauss points per time interval for `W`.
    pub time_order: TimeRule,
    pub gradient: GradientForm,
    pub anisotropy: AnisotropyForm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeRule {
    /// Three-point Gauss rule per interval.
    Gauss3,
    Gauss10,
    /// Gauss10 on `n` equal sub-intervals of each interval.
    Composite(usize),
}

impl Default for EnergyOptions {
    fn default() -> Self {
        EnergyOptions {
            abs_tol: 1e-9,
            rel_tol: 1e-8,
            max_cells: 40000,
            time_order: TimeRule::Gauss10,
            gradient: GradientForm::Tensor,
            anisotropy: AnisotropyForm::Formula,
        }
    }
}

/// `a(t)` in the chosen form.
pub fn anisotropy(form: AnisotropyForm, t: f64, path: &CrackPath, law: &GrowthLaw, a: &TensorField) -> Result<f64> {
    match form {
        AnisotropyForm::Formula => material::a_factor(t, path, law, a),
        AnisotropyForm::Transported => {
            let s = law.eval(t)?.0;
            let f = path.frame(s)?;
            let m = a.at(f.point);
            Ok(material::c_tangent(a, f.point, f.tangent) * dual::det(m).sqrt())
        }
    }
}

/// Box containing `supp ξ(Φ(t, ·))`, clipped to the domain when it is convex.
pub fn support_region(mms: &Mms, domain: &Domain, t: f64) -> Result<Region> {
    let eps = match mms.xi {
        Cutoff::Tensor { eps } => eps,
        Cutoff::Radial { outer, .. } => outer,
    };
    let p = mms.windows.at(t);
    let e = 1.05 * eps;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for i in -2..=2 {
        for j in [-2, 2] {
            for y in [[e * i as f64 / 2.0, e * j as f64 / 2.0], [e * j as f64 / 2.0, e * i as f64 / 2.0]] {
                let x = p.phi_inverse(t, y)?;
                for k in 0..2 {
                    lo[k] = lo[k].min(x[k]);
                    hi[k] = hi[k].max(x[k]);
                }
            }
        }
    }
    let pad = 0.05 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let mut poly = vec![
        [lo[0] - pad, lo[1] - pad],
        [hi[0] + pad, lo[1] - pad],
        [hi[0] + pad, hi[1] + pad],
        [lo[0] - pad, hi[1] + pad],
    ];
    if domain.is_convex() {
        for i in 0..domain.vertices.len() {
            let (a, b) = domain.edge(i);
            let n = dual::perp(dual::sub(b, a));
            poly = clip_halfplane(&poly, a, n);
        }
    } else if poly.iter().any(|&v| !domain.contains(v)) {
        return Err(Error::Geometry("ξ support leaves a non-convex domain".into()));
    }
    Ok(Region::Polygon(poly))
}

fn slit_at(mms: &Mms, t: f64) -> Slit {
    let p = mms.windows.at(t);
    let s = p.law.s(t);
    let (r, d) = p.path.eval::<f64>(s);
    Slit { tip: r, dir: dual::scale(1.0 / dual::norm(d), d) }
}

fn quadrature(mms: &Mms, domain: &Domain, t: f64, opts: &EnergyOptions) -> Result<SlitQuadrature> {
    let mut q = SlitQuadrature::new(support_region(mms, domain, t)?, Some(slit_at(mms, t)))
        .with_tol(opts.abs_tol, opts.rel_tol);
    q.opts.max_cells = opts.max_cells;
    Ok(q)
}

/// `E(t)` split into kinetic and elastic parts, both gradient forms.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergySample {
    pub t: f64,
    pub kinetic: f64,
    pub elastic: f64,
    pub elastic_plain: f64,
    pub error: f64,
}

impl EnergySample {
    pub fn total(&self, form: GradientForm) -> f64 {
        match form {
            GradientForm::Tensor => self.kinetic + self.elastic,
            GradientForm::Plain => self.kinetic + self.elastic_plain,
        }
    }
}

pub fn energy_at(mms: &Mms, domain: &Domain, t: f64, opts: &EnergyOptions) -> Result<EnergySample> {
    let q = quadrature(mms, domain, t, opts)?;
    let part = |which: u8| {
        integrate_cracked(
            |x| {
                let m = mms.eval(t, x);
                match which {
                    0 => 0.5 * m.ut * m.ut,
                    1 => 0.5 * dual::dot(m.grad, matvec(mms.a.at(x), m.grad)),
                    _ => 0.5 * dual::dot(m.grad, m.grad),
                }
            },
            &q,
        )
    };
    let k = part(0)?;
    let e = part(1)?;
    let ep = if mms.a.is_identity() { e } else { part(2)? };
    Ok(EnergySample { t, kinetic: k.value, elastic: e.value, elastic_plain: ep.value, error: k.error + e.error + ep.error })
}

/// `⟨f(t), u̇(t)⟩_{L²}`.
pub fn power_at(mms: &Mms, domain: &Domain, t: f64, opts: &EnergyOptions) -> Result<QuadResult> {
    let q = quadrature(mms, domain, t, opts)?;
    integrate_cracked(
        |x| {
            let m = mms.eval(t, x);
            m.f * m.ut
        },
        &q,
    )
}

/// `(π/4) ∫_{t0}^{t1} k² a ṡ`.
pub fn dissipation<F: Fn(f64) -> f64>(k: &Intensity, a: F, law: &GrowthLaw, t0: f64, t1: f64) -> QuadResult {
    let pi4 = 0.25 * std::f64::consts::PI;
    gk::integrate(
        |t| {
            let kt = k.at(t);
            pi4 * kt * kt * a(t) * law.sdot(t)
        },
        t0,
        t1,
        QuadOptions { abs_tol: 1e-12, rel_tol: 1e-10, max_panels: 500 },
    )
}

/// Gauss nodes and weights covering `[a, b]` under `rule`.
fn time_nodes(a: f64, b: f64, rule: TimeRule) -> Vec<(f64, f64)> {
    let n = match rule {
        TimeRule::Gauss3 => {
            let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
            let x = (0.6f64).sqrt();
            return vec![(m - h * x, h * 5.0 / 9.0), (m, h * 8.0 / 9.0), (m + h * x, h * 5.0 / 9.0)];
        }
        TimeRule::Gauss10 => 1,
        TimeRule::Composite(n) => n.max(1),
    };
    let mut out = Vec::new();
    for i in 0..n {
        let lo = a + (b - a) * i as f64 / n as f64;
        let hi = a + (b - a) * (i + 1) as f64 / n as f64;
        let (m, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (x, w) in gk::gauss10_rule() {
            out.push((m + h * x, h * w));
        }
    }
    out
}

/// Cumulative `W(tᵢ) = ∫_{t0}^{tᵢ} ⟨f, u̇⟩` on the grid, with error sums.
pub fn work(mms: &Mms, domain: &Domain, times: &[f64], opts: &EnergyOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    let nodes: Vec<(usize, f64, f64)> = times
        .windows(2)
        .enumerate()
        .flat_map(|(i, w)| time_nodes(w[0], w[1], opts.time_order).into_iter().map(move |(t, wt)| (i, t, wt)))
        .collect();
    let vals: Vec<Result<(f64, f64)>> = nodes
        .par_iter()
        .map(|&(_, t, wt)| power_at(mms, domain, t, opts).map(|r| (wt * r.value, wt.abs() * r.error)))
        .collect();
    let mut inc = vec![Vec::new(); times.len().saturating_sub(1)];
    let mut err = vec![0.0; times.len().saturating_sub(1)];
    for ((i, _, _), v) in nodes.iter().zip(vals) {
        let (v, e) = v?;
        inc[*i].push(v);
        err[*i] += e;
    }
    let mut w = vec![0.0];
    let mut we = vec![0.0];
    for (i, parts) in inc.iter().enumerate() {
        w.push(w[i] + dual::pairwise_sum(parts));
        we.push(we[i] + err[i]);
    }
    Ok((w, we))
}

/// Balance trace for one manufactured run.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    pub schema_version: u32,
    pub velocity_source: &'static str,
    pub gradient_form: GradientForm,
    pub anisotropy_form: AnisotropyForm,
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub energy_plain: Vec<f64>,
    pub energy_error: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub work: Vec<f64>,
    pub work_error: Vec<f64>,
    pub crack_increment: Vec<f64>,
    /// `E(t) − E(0) + D(t) − W(t)`
    pub r_gen: Vec<f64>,
    /// `E(t) − E(0) + H¹(Γ(t) \ Γ(0)) − W(t)`
    pub r_griffith: Vec<f64>,
    pub max_energy: f64,
    pub max_r_gen: f64,
    pub max_r_griffith: f64,
    /// `Δs (1 − (π/4) k² a)` at the final time for constant `k`, `a`.
    pub predicted_griffith: Option<f64>,
    pub tol: f64,
    pub generalized_holds: bool,
    pub griffith_holds: bool,
}

/// Run the balance audit for `mms` on `times`.
pub fn run_mms(
    mms: &Mms,
    domain: &Domain,
    path: &CrackPath,
    law: &GrowthLaw,
    times: &[f64],
    opts: &EnergyOptions,
    tol_rel: f64,
) -> Result<EnergyReport> {
    if times.len() < 2 {
        return Err(Error::Parameter("need at least two time samples".into()));
    }
    let samples: Vec<Result<EnergySample>> = times.par_iter().map(|&t| energy_at(mms, domain, t, opts)).collect();
    let samples: Vec<EnergySample> = samples.into_iter().collect::<Result<_>>()?;
    let (w, we) = work(mms, domain, times, opts)?;
    let a_of = |t: f64| anisotropy(opts.anisotropy, t, path, law, &mms.a).unwrap_or(f64::NAN);
    let t0 = times[0];
    let s0 = law.s(t0);
    let energy: Vec<f64> = samples.iter().map(|s| s.total(opts.gradient)).collect();
    let e0 = energy[0];
    let mut d = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    d.push(0.0);
    for win in times.windows(2) {
        acc += dissipation(&mms.k, a_of, law, win[0], win[1]).value;
        d.push(acc);
    }
    let h1: Vec<f64> = times.iter().map(|&t| law.s(t) - s0).collect();
    let r_gen: Vec<f64> = (0..times.len()).map(|i| energy[i] - e0 + d[i] - w[i]).collect();
    let r_g: Vec<f64> = (0..times.len()).map(|i| energy[i] - e0 + h1[i] - w[i]).collect();
    let max_e = energy.iter().copied().fold(0.0, f64::max);
    let max_abs = |v: &[f64]| v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let tol = tol_rel * max_e;
    let predicted = (mms.k.coeffs.len() == 1).then(|| {
        let k = mms.k.coeffs[0];
        let n = times.len() - 1;
        h1[n] * (1.0 - 0.25 * std::f64::consts::PI * k * k * a_of(times[n]))
    });
    Ok(EnergyReport {
        schema_version: SCHEMA_VERSION,
        velocity_source: "analytic",
        gradient_form: opts.gradient,
        anisotropy_form: opts.anisotropy,
        times: times.to_vec(),
        energy_plain: samples.iter().map(|s| s.kinetic + s.elastic_plain).collect(),
        energy_error: samples.iter().map(|s| s.error).collect(),
        energy,
        dissipation: d,
        max_r_gen: max_abs(&r_gen),
        max_r_griffith: max_abs(&r_g),
        generalized_holds: max_abs(&r_gen) <= tol,
        griffith_holds: max_abs(&r_g) <= tol,
        work: w,
        work_error: we,
        crack_increment: h1,
        r_gen,
        r_griffith: r_g,
        max_energy: max_e,
        predicted_griffith: predicted,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dissipation_closed_forms() {
        let law = GrowthLaw::linear(0.3, 0.5, 1.0, 1.0, 0.5);
        let k = Intensity::constant(2.0 / std::f64::consts::PI.sqrt());
        let d = dissipation(&k, |_| 1.0, &law, 0.0, 0.8).value;
        assert!((d - 0.4).abs() < 1e-12);
        let d1 = dissipation(&Intensity::constant(1.0), |_| 1.0, &law, 0.0, 0.8).value;
        assert!((d1 - 0.25 * std::f64::consts::PI * 0.4).abs() < 1e-12);
    }

    #[test]
    fn time_nodes_integrate_polynomials() {
        let v: f64 = time_nodes(0.0, 2.0, TimeRule::Composite(3)).iter().map(|(t, w)| w * t * t * t).sum();
        assert!((v - 4.0).abs() < 1e-13);
        let v: f64 = time_nodes(1.0, 2.0, TimeRule::Gauss3).iter().map(|(t, w)| w * t.powi(5)).sum();
        assert!((v - 63.0 / 6.0).abs() < 1e-13);
    }
}
