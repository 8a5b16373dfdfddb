//! The four changes of variables `χ`, `Λ`, `Ψ(t)`, `P(t)`, their composition
//! `Φ(t) = P(t)∘Ψ(t)∘Λ∘χ`, and the coefficients of the transformed equation
//!
//! `v̈ − div(A⁽⁴⁾∇v) + p·∇v − 2q·∇v̇ = g` on the fixed slit domain.
//!
//! All maps are generic over [`Real`], so a single definition yields values,
//! Jacobians, time derivatives and second derivatives.
//!
//! Maps defined implicitly (tube coordinates) are solved in `f64` and then
//! refined by two chord-Newton steps in dual arithmetic, which reproduces the
//! exact first and second derivatives of the inverse-function theorem.

use num_dual::{Dual2_64, Dual64, DualNum};
use serde::Serialize;

use crate::dual::{self, c, lift2, lift_m, matvec, norm, perp, radial_cutoff_vec, re2, Jet, Real, D2, M2, V2};
use crate::error::{Error, Result};
use crate::geom::{CrackPath, Domain, GrowthLaw};
use crate::material::{self, TensorField};
use crate::quad::gk::{self, QuadOptions};

/// Smooth chart `(t, x) ↦ y`.
pub trait Chart: Sync {
    fn map<D: Real>(&self, t: D, x: V2<D>) -> V2<D>;

    fn value(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        self.map(t, x)
    }

    fn jet(&self, t: f64, x: [f64; 2]) -> Jet {
        dual::jet_of(|t, x| self.map(t, x), t, x)
    }

    /// `(value, D_x, ∂_t)`.
    fn jacobian(&self, t: f64, x: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2], [f64; 2]) {
        dual::jacobian_of(|t, x| self.map(t, x), t, x)
    }

    /// Damped Newton for `map(t, x) = y` from `seed`.
    fn inverse_from(&self, t: f64, y: [f64; 2], seed: [f64; 2], tol: f64) -> Result<[f64; 2]> {
        newton_inverse(|x| self.jacobian(t, x), y, seed, tol)
    }
}

/// `second ∘ first`.
pub struct Compose<F, G> {
    pub first: F,
    pub second: G,
}

impl<F: Chart, G: Chart> Chart for Compose<F, G> {
    fn map<D: Real>(&self, t: D, x: V2<D>) -> V2<D> {
        self.second.map(t, self.first.map(t, x))
    }
}

pub const MAX_NEWTON: usize = 50;

fn newton_inverse<J>(jac: J, y: [f64; 2], seed: [f64; 2], tol: f64) -> Result<[f64; 2]>
where
    J: Fn([f64; 2]) -> ([f64; 2], [[f64; 2]; 2], [f64; 2]),
{
    let mut x = seed;
    let (mut fx, mut d, _) = jac(x);
    let mut res = norm(dual::sub(fx, y));
    for _ in 0..MAX_NEWTON {
        if res <= tol {
            return Ok(x);
        }
        if dual::det(d).abs() < 1e-300 {
            break;
        }
        let step = matvec(dual::inv(d), dual::sub(fx, y));
        let mut lam = 1.0;
        loop {
            let xn = dual::sub(x, dual::scale(lam, step));
            let (fn_, dn, _) = jac(xn);
            let rn = norm(dual::sub(fn_, y));
            if rn < res || lam < 1e-4 {
                x = xn;
                fx = fn_;
                d = dn;
                res = rn;
                break;
            }
            lam *= 0.5;
        }
    }
    if res <= tol {
        Ok(x)
    } else {
        Err(Error::Inversion { iterations: MAX_NEWTON, residual: res })
    }
}

/// Two chord-Newton steps for `f(z) = x` in dual arithmetic from the `f64`
/// root `z0`, with `jinv` the inverse Jacobian at the root.
fn refine<D: Real, F: Fn(V2<D>) -> V2<D>>(z0: [f64; 2], jinv: [[f64; 2]; 2], x: V2<D>, f: F) -> V2<D> {
    let mut z = lift2::<D>(z0);
    let j = lift_m::<D>(jinv);
    for _ in 0..2 {
        let r = dual::sub(f(z), x);
        z = dual::sub(z, matvec(j, r));
    }
    z
}

/// `v(σ_re) + h δ + ½ h' δ²` with `δ = σ − σ_re`: exact to second order for a
/// function whose derivative is `h` at `σ_re` with slope `h'`.
fn taylor2<D: Real>(s: D, v: f64, h: f64, hp: f64) -> D {
    let d = s - s.re();
    d * h + d * d * (0.5 * hp) + v
}

/// Cumulative integral of a smooth integrand on a fixed panel grid; partial
/// panels use a 10-point Gauss rule.
#[derive(Clone, Debug)]
struct CumTable {
    knots: Vec<f64>,
    cum: Vec<f64>,
}

impl CumTable {
    fn new<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, panels: usize) -> CumTable {
        let knots: Vec<f64> = (0..=panels).map(|i| lo + (hi - lo) * i as f64 / panels as f64).collect();
        let mut cum = vec![0.0];
        for w in knots.windows(2) {
            let v = gk::integrate(f, w[0], w[1], QuadOptions { abs_tol: 1e-15, rel_tol: 1e-15, max_panels: 64 }).value;
            cum.push(cum.last().copied().unwrap_or(0.0) + v);
        }
        CumTable { knots, cum }
    }

    fn at<F: Fn(f64) -> f64>(&self, f: &F, x: f64) -> f64 {
        let n = self.knots.len() - 1;
        let h = self.knots[1] - self.knots[0];
        let i = (((x - self.knots[0]) / h).floor().max(0.0) as usize).min(n - 1);
        self.cum[i] + gk::gauss10(f, self.knots[i], x)
    }
}

/// First chart `χ`, with `Dχ = Q = A^{-1/2}` on the crack near the anchor.
#[derive(Clone, Debug)]
pub enum Chi {
    Identity,
    /// `r_a + Q (x − r_a)`; exact for constant `A`.
    Affine { anchor: [f64; 2], q: [[f64; 2]; 2] },
    /// Tubular construction `χ(γ(σ) + τn) = c(σ) + τ Q(γ(σ)) n(σ)` blended
    /// radially to the affine map at the anchor.
    Tube(Box<TubeChi>),
}

#[derive(Clone, Debug)]
pub struct TubeChi {
    pub anchor: [f64; 2],
    pub sigma_a: f64,
    pub q_a: [[f64; 2]; 2],
    pub core: f64,
    pub outer: f64,
    cx: CumTable,
    cy: CumTable,
}

/// Parameters of the construction.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChartParams {
    /// Radius of the `P` chart.
    pub eta: f64,
    /// `Ψ` translates rigidly inside `psi_core` and is the identity beyond `psi_outer`.
    pub psi_core: f64,
    pub psi_outer: f64,
    /// Exact tube coordinates for `Λ` inside `tube_core`, rigid motion beyond `tube_outer`.
    pub tube_core: f64,
    pub tube_outer: f64,
    /// Same radii for the tubular `χ` (variable `A` only).
    pub chi_core: f64,
    pub chi_outer: f64,
}

impl ChartParams {
    /// Radii derived from the tip-to-boundary distance (in straightened
    /// coordinates) and the curvature of the path; `eta` as given. With
    /// `rigid` (straight crack, constant `A`) `Ψ` may use the whole distance.
    pub fn for_tip(dist: f64, kappa: f64, eta: f64, rigid: bool) -> ChartParams {
        let reach = if kappa > 0.0 { 0.5 / kappa } else { f64::INFINITY };
        let tube_outer = (0.6 * dist).min(reach);
        let tube_core = 0.5 * tube_outer;
        let room = if rigid { dist } else { tube_core.min(dist) };
        let psi_outer = 0.9 * room;
        // Balances the two limits in `max_shift`.
        let psi_core = ((eta + 0.25 * psi_outer) / 1.25).min(0.95 * psi_outer);
        ChartParams { eta, psi_core, psi_outer, tube_core, tube_outer, chi_core: tube_core, chi_outer: tube_outer }
    }

    /// Largest tip displacement (in straightened coordinates) a window may
    /// accommodate: the tip plus the `P` ball stays in the `Ψ` plateau, and
    /// `Ψ` stays a diffeomorphism across its blend ring.
    pub fn max_shift(&self) -> f64 {
        (self.psi_core - self.eta).min(0.25 * (self.psi_outer - self.psi_core))
    }
}

/// `Λ`: rigid motion for straight transformed cracks, tube coordinates
/// blended to the rigid motion otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LambdaKind {
    Rigid,
    Tube,
}

/// The full construction anchored at `t0`.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub path: CrackPath,
    pub law: GrowthLaw,
    pub a: TensorField,
    pub t0: f64,
    pub params: ChartParams,
    pub c1: f64,
    pub chi: Chi,
    pub lambda: LambdaKind,
    /// `σ0 = s(t0)`.
    pub sigma0: f64,
    /// `c(σ0) = χ(γ(σ0))`.
    pub c0: [f64; 2],
    /// Rotation taking the transformed tangent at `σ0` to `e1`.
    pub rot: [[f64; 2]; 2],
    beta: Option<CumTable>,
    pub beta0: f64,
    /// Length scale for inversion tolerances.
    pub scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Chi,
    Lambda,
    Psi,
    P,
    Phi,
}

/// One stage of a [`Pipeline`] as a [`Chart`].
#[derive(Clone, Copy)]
pub struct StageChart<'a> {
    pub pipeline: &'a Pipeline,
    pub stage: Stage,
}

impl Chart for StageChart<'_> {
    fn map<D: Real>(&self, t: D, x: V2<D>) -> V2<D> {
        let p = self.pipeline;
        match self.stage {
            Stage::Chi => p.chi_map(x),
            Stage::Lambda => p.lambda_map(x),
            Stage::Psi => p.psi(t, x),
            Stage::P => p.p_chart(t, x),
            Stage::Phi => p.phi(t, x),
        }
    }
}

/// Cutoff `k_η`: 1 on `[0, η/2)`, `(2s − 2)²(4s − 1)` with
/// `s = τ/η` on `[η/2, η)`, 0 beyond.
pub fn k_eta<D: Real>(tau: D, eta: f64) -> D {
    let r = tau.re();
    if r < 0.5 * eta {
        c(1.0)
    } else if r >= eta {
        c(0.0)
    } else {
        let s = tau / eta;
        let a = s * 2.0 - 2.0;
        a * a * (s * 4.0 - 1.0)
    }
}

fn k_eta_vec<D: Real>(x: V2<D>, eta: f64) -> D {
    let r2 = x[0].re() * x[0].re() + x[1].re() * x[1].re();
    if r2 < 0.25 * eta * eta {
        c(1.0)
    } else if r2 >= eta * eta {
        c(0.0)
    } else {
        k_eta(norm(x), eta)
    }
}

/// Rotation matrix taking the unit vector `u` to `e1`.
fn rotation_to_e1(u: [f64; 2]) -> [[f64; 2]; 2] {
    [[u[0], u[1]], [-u[1], u[0]]]
}

impl Pipeline {
    /// Build the construction anchored at `t0`.
    pub fn new(
        path: &CrackPath,
        law: &GrowthLaw,
        a: &TensorField,
        domain: &Domain,
        t0: f64,
        params: ChartParams,
    ) -> Result<Pipeline> {
        let (s0, _, _) = law.eval(t0)?;
        let r0 = path.frame(s0)?.point;
        let diam = domain.diameter();
        if params.eta <= 0.0 || params.eta >= params.psi_core {
            return Err(Error::Geometry(format!(
                "η = {} must lie in (0, {}) (Ψ plateau radius)",
                params.eta, params.psi_core
            )));
        }
        let dist = domain.distance_to_boundary(r0);
        let q_a = material::spd_sqrt(a.at(r0))?.1;
        let smin = dual::sym_eigs(q_a).0;
        let kappa = path.max_curvature(400);
        let curved = !matches!(path, CrackPath::Segment { .. });
        if curved && params.tube_outer * kappa >= 1.0 {
            return Err(Error::Geometry(format!(
                "tube radius {} times curvature {} is not below 1: tube folds",
                params.tube_outer, kappa
            )));
        }
        let chi = if a.is_identity() {
            Chi::Identity
        } else if a.is_constant() {
            Chi::Affine { anchor: r0, q: q_a }
        } else {
            if params.chi_outer >= dist {
                return Err(Error::Geometry(format!(
                    "χ tube radius {} exceeds the tip-to-boundary distance {dist}",
                    params.chi_outer
                )));
            }
            if params.chi_outer * kappa >= 1.0 {
                return Err(Error::Geometry("χ tube folds: radius times curvature ≥ 1".into()));
            }
            let l = path.length();
            let hx = |s: f64| matvec(material::inv_sqrt_at(a, path.point(s)), path.eval::<f64>(s).1)[0];
            let hy = |s: f64| matvec(material::inv_sqrt_at(a, path.point(s)), path.eval::<f64>(s).1)[1];
            let n = 512;
            Chi::Tube(Box::new(TubeChi {
                anchor: r0,
                sigma_a: s0,
                q_a,
                core: params.chi_core,
                outer: params.chi_outer,
                cx: CumTable::new(&hx, 0.0, l, n),
                cy: CumTable::new(&hy, 0.0, l, n),
            }))
        };
        // Ψ and P live in straightened coordinates, where lengths are scaled by at least σ_min(Q).
        if params.psi_outer >= dist * smin {
            return Err(Error::Geometry(format!(
                "Ψ support radius {} reaches the boundary (distance {})",
                params.psi_outer,
                dist * smin
            )));
        }
        let lambda = if matches!(path, CrackPath::Segment { .. }) && !matches!(chi, Chi::Tube(_)) {
            LambdaKind::Rigid
        } else {
            LambdaKind::Tube
        };
        let mut p = Pipeline {
            path: path.clone(),
            law: law.clone(),
            a: a.clone(),
            t0,
            params,
            c1: law.c1(),
            chi,
            lambda,
            sigma0: s0,
            c0: [0.0; 2],
            rot: [[1.0, 0.0], [0.0, 1.0]],
            beta: None,
            beta0: 0.0,
            scale: diam,
        };
        if !matches!(p.chi, Chi::Identity) {
            let l = path.length();
            let pc = p.clone();
            let speed = move |s: f64| norm(pc.crack_tangent::<f64>(s));
            p.beta = Some(CumTable::new(&speed, 0.0, l, 512));
        }
        p.c0 = p.crack_point::<f64>(s0);
        let h0 = p.crack_tangent::<f64>(s0);
        p.rot = rotation_to_e1(dual::scale(1.0 / norm(h0), h0));
        p.beta0 = p.beta_of::<f64>(s0);
        Ok(p)
    }

    pub fn stage(&self, stage: Stage) -> StageChart<'_> {
        StageChart { pipeline: self, stage }
    }

    fn q_at<D: Real>(&self, x: V2<D>) -> M2<D> {
        match &self.chi {
            Chi::Identity => lift_m([[1.0, 0.0], [0.0, 1.0]]),
            Chi::Affine { q, .. } => lift_m(*q),
            Chi::Tube(_) => material::inv_sqrt_at(&self.a, x),
        }
    }

    /// `c'(σ) = Q(γ(σ)) γ'(σ)`: tangent of the transformed crack.
    pub fn crack_tangent<D: Real>(&self, s: D) -> V2<D> {
        let (p, d) = self.path.eval(s);
        match &self.chi {
            Chi::Identity => d,
            _ => matvec(self.q_at(p), d),
        }
    }

    fn tangent_slope(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let h = self.crack_tangent(Dual64::from_re(s).derivative());
        ([h[0].re, h[1].re], [h[0].eps, h[1].eps])
    }

    /// `c(σ) = χ(γ(σ))`.
    pub fn crack_point<D: Real>(&self, s: D) -> V2<D> {
        match &self.chi {
            Chi::Identity => self.path.eval(s).0,
            Chi::Affine { anchor, q } => {
                let p = self.path.eval(s).0;
                dual::add(lift2(*anchor), matvec(lift_m(*q), dual::sub(p, lift2(*anchor))))
            }
            Chi::Tube(tc) => {
                let sr = s.re();
                let hx = |u: f64| self.crack_tangent::<f64>(u)[0];
                let hy = |u: f64| self.crack_tangent::<f64>(u)[1];
                let base = [
                    tc.anchor[0] + tc.cx.at(&hx, sr) - tc.cx.at(&hx, tc.sigma_a),
                    tc.anchor[1] + tc.cy.at(&hy, sr) - tc.cy.at(&hy, tc.sigma_a),
                ];
                let (h, hp) = self.tangent_slope(sr);
                [taylor2(s, base[0], h[0], hp[0]), taylor2(s, base[1], h[1], hp[1])]
            }
        }
    }

    /// Arc length of the transformed crack, `β(σ) = ∫₀^σ |c'|`.
    pub fn beta_of<D: Real>(&self, s: D) -> D {
        match &self.beta {
            None => s,
            Some(tab) => {
                let sr = s.re();
                let speed = |u: f64| norm(self.crack_tangent::<f64>(u));
                let v = tab.at(&speed, sr);
                let h = self.crack_tangent(Dual64::from_re(sr).derivative());
                let sp = norm(h);
                taylor2(s, v, sp.re, sp.eps)
            }
        }
    }

    /// Transported tip position `s⁽¹⁾(t) = β(s(t))`.
    pub fn s1<D: Real>(&self, t: D) -> D {
        self.beta_of(self.law.s(t))
    }

    /// `ṡ⁽¹⁾(t) = |c'(s(t))| ṡ(t)`.
    pub fn sdot1<D: Real>(&self, t: D) -> D {
        norm(self.crack_tangent(self.law.s(t))) * self.law.sdot(t)
    }

    /// `α(t) = √(1 − ṡ⁽¹⁾(t)²)`.
    pub fn alpha<D: Real>(&self, t: D) -> D {
        let v = self.sdot1(t);
        (D::from(1.0) - v * v).sqrt()
    }

    /// `s̈⁽¹⁾(t)`.
    pub fn sddot1(&self, t: f64) -> f64 {
        self.s1(Dual2_64::from_re(t).derivative()).v2
    }

    pub fn chi_map<D: Real>(&self, x: V2<D>) -> V2<D> {
        match &self.chi {
            Chi::Identity => x,
            Chi::Affine { anchor, q } => dual::add(lift2(*anchor), matvec(lift_m(*q), dual::sub(x, lift2(*anchor)))),
            Chi::Tube(tc) => {
                let affine = dual::add(lift2(tc.anchor), matvec(lift_m(tc.q_a), dual::sub(x, lift2(tc.anchor))));
                let rel = dual::sub(x, lift2(tc.anchor));
                let b = radial_cutoff_vec(rel, tc.core, tc.outer);
                if b.re() == 0.0 {
                    return affine;
                }
                let xr = re2(x);
                let Some((root, jinv)) = self.path_tube_root(xr, tc.sigma_a, tc.outer) else {
                    return affine;
                };
                let z = refine(root, jinv, x, |z: V2<D>| {
                    let (p, d) = self.path.eval(z[0]);
                    dual::add(p, dual::scale(z[1], perp(d)))
                });
                let (p, d) = self.path.eval(z[0]);
                let tube = dual::add(self.crack_point(z[0]), dual::scale(z[1], matvec(self.q_at(p), perp(d))));
                let one_b = D::from(1.0) - b;
                [b * tube[0] + one_b * affine[0], b * tube[1] + one_b * affine[1]]
            }
        }
    }

    /// `(σ, τ)` with `γ(σ) + τ n(σ) = x`, and the inverse Jacobian there.
    fn path_tube_root(&self, x: [f64; 2], around: f64, radius: f64) -> Option<([f64; 2], [[f64; 2]; 2])> {
        let l = self.path.length();
        let lo = (around - 2.0 * radius).max(0.0);
        let hi = (around + 2.0 * radius).min(l);
        let mut s = self.path.project(x, lo, hi);
        let mut tau = 0.0;
        for _ in 0..MAX_NEWTON {
            let f = self.path.frame_unchecked(s);
            tau = dual::dot(dual::sub(x, f.point), f.normal);
            let g = dual::dot(dual::sub(f.point, x), f.tangent);
            let h = 1.0 + dual::dot(dual::sub(f.point, x), f.second);
            let ds = g / h;
            s -= ds;
            if ds.abs() < 1e-15 * (1.0 + s.abs()) {
                break;
            }
        }
        if !(0.0..=l).contains(&s) {
            return None;
        }
        let f = self.path.frame_unchecked(s);
        tau = dual::dot(dual::sub(x, f.point), f.normal).max(tau.min(f64::INFINITY));
        let np = perp(f.second);
        let j = [[f.tangent[0] + tau * np[0], f.normal[0]], [f.tangent[1] + tau * np[1], f.normal[1]]];
        Some(([s, tau], dual::inv(j)))
    }

    /// Tube coordinates of the transformed crack: `(u, τ)` with
    /// `c(u) + τ n⁽¹⁾(u) = x`.
    fn crack_tube_root(&self, x: [f64; 2]) -> Option<([f64; 2], [[f64; 2]; 2])> {
        let l = self.path.length();
        let g = |z: V2<D2>| -> V2<D2> {
            let p = self.crack_point(z[0]);
            let h = self.crack_tangent(z[0]);
            let n = dual::scale(norm(h).recip(), perp(h));
            dual::add(p, dual::scale(z[1], n))
        };
        let eval = |u: f64, tau: f64| {
            let z = [D2::from_re(u).derivative(0), D2::from_re(tau).derivative(1)];
            let v = g(z);
            let e0 = v[0].eps.unwrap_generic(nalgebra::Const::<2>, nalgebra::U1);
            let e1 = v[1].eps.unwrap_generic(nalgebra::Const::<2>, nalgebra::U1);
            ([v[0].re, v[1].re], [[e0[0], e0[1]], [e1[0], e1[1]]])
        };
        // Seed from the rigid approximation at the anchor.
        let h0 = norm(self.crack_tangent::<f64>(self.sigma0));
        let m = matvec(self.rot, dual::sub(x, self.c0));
        let mut z = [(self.sigma0 + m[0] / h0).clamp(0.0, l), m[1]];
        for _ in 0..MAX_NEWTON {
            let (v, j) = eval(z[0], z[1]);
            let r = dual::sub(v, x);
            if dual::det(j).abs() < 1e-300 {
                return None;
            }
            let step = matvec(dual::inv(j), r);
            z = dual::sub(z, step);
            z[0] = z[0].clamp(0.0, l);
            if norm(step) < 1e-15 * (1.0 + norm(z)) {
                break;
            }
        }
        let (v, j) = eval(z[0], z[1]);
        if norm(dual::sub(v, x)) > 1e-9 * self.scale.max(1.0) {
            return None;
        }
        Some((z, dual::inv(j)))
    }

    fn rigid<D: Real>(&self, x: V2<D>) -> V2<D> {
        matvec(lift_m(self.rot), dual::sub(x, lift2(self.c0)))
    }

    pub fn lambda_map<D: Real>(&self, x: V2<D>) -> V2<D> {
        let rigid = self.rigid(x);
        if self.lambda == LambdaKind::Rigid {
            return rigid;
        }
        let rel = dual::sub(x, lift2(self.c0));
        let b = radial_cutoff_vec(rel, self.params.tube_core, self.params.tube_outer);
        if b.re() == 0.0 {
            return rigid;
        }
        let Some((root, jinv)) = self.crack_tube_root(re2(x)) else {
            return rigid;
        };
        let z = refine(root, jinv, x, |z: V2<D>| {
            let p = self.crack_point(z[0]);
            let h = self.crack_tangent(z[0]);
            dual::add(p, dual::scale(z[1] / norm(h), perp(h)))
        });
        let tube = [self.beta_of(z[0]) - self.beta0, z[1]];
        let one_b = D::from(1.0) - b;
        [b * tube[0] + one_b * rigid[0], b * tube[1] + one_b * rigid[1]]
    }

    /// `Ψ(t, x) = x − ζ_Ψ(|x|) (s⁽¹⁾(t) − s⁽¹⁾(t0)) e1`.
    pub fn psi<D: Real>(&self, t: D, x: V2<D>) -> V2<D> {
        let z = radial_cutoff_vec(x, self.params.psi_core, self.params.psi_outer);
        let shift = self.s1(t) - self.s1(self.t0);
        [x[0] - z * shift, x[1]]
    }

    /// `P(t, x) = (x1 / d(t, x), x2)`, `d = α k_η(|x|) + (1 − k_η(|x|)) c1`.
    pub fn p_chart<D: Real>(&self, t: D, x: V2<D>) -> V2<D> {
        let k = k_eta_vec(x, self.params.eta);
        let d = self.alpha(t) * k + (D::from(1.0) - k) * self.c1;
        [x[0] / d, x[1]]
    }

    /// `Φ(t) = P(t)∘Ψ(t)∘Λ∘χ`.
    pub fn phi<D: Real>(&self, t: D, x: V2<D>) -> V2<D> {
        self.p_chart(t, self.psi(t, self.lambda_map(self.chi_map(x))))
    }

    pub fn phi_jet(&self, t: f64, x: [f64; 2]) -> Jet {
        self.stage(Stage::Phi).jet(t, x)
    }

    /// Tip `r(t) = γ(s(t))`.
    pub fn tip(&self, t: f64) -> [f64; 2] {
        self.path.point(self.law.s(t))
    }

    /// `Φ(t)^{-1}(y)`, seeded by the inverse of the linearisation at the tip.
    pub fn phi_inverse(&self, t: f64, y: [f64; 2]) -> Result<[f64; 2]> {
        let r = self.tip(t);
        let (_, d, _) = self.stage(Stage::Phi).jacobian(t, r);
        let seed = dual::add(r, matvec(dual::inv(d), y));
        let tol = 1e-12 * self.scale.max(1.0);
        let ph = self.stage(Stage::Phi);
        ph.inverse_from(t, y, seed, tol).or_else(|_| {
            // Fall back to a continuation from the tip along the segment to y.
            let mut x = r;
            for k in 1..=16 {
                let yk = dual::scale(k as f64 / 16.0, y);
                x = ph.inverse_from(t, yk, x, if k == 16 { tol } else { 1e-8 * self.scale.max(1.0) })?;
            }
            Ok(x)
        })
    }

    /// Largest window length from `t0`: the tip shift in straightened
    /// coordinates stays within [`ChartParams::max_shift`].
    pub fn window_end(&self, t_max: f64) -> f64 {
        let shift = self.params.max_shift();
        let base = self.s1(self.t0);
        let n = 200;
        let mut end = self.t0;
        for i in 1..=n {
            let t = self.t0 + (t_max - self.t0) * i as f64 / n as f64;
            if self.s1(t) - base > shift {
                break;
            }
            end = t;
        }
        end
    }

    /// Check that the window `[t0, t1]` fits the construction.
    pub fn check_window(&self, t1: f64) -> Result<()> {
        let shift = self.s1(t1) - self.s1(self.t0);
        if shift > self.params.max_shift() + 1e-14 {
            return Err(Error::Window(format!(
                "crack advance {shift} over [{}, {t1}] exceeds the Ψ plateau allowance {}; use a shorter window ρ",
                self.t0,
                self.params.max_shift()
            )));
        }
        Ok(())
    }

    /// Transformed coefficients at `y = Φ(t, x)`, evaluated from the physical point `x`.
    pub fn coefficients_at(&self, t: f64, x: [f64; 2]) -> Coefficients {
        let j = self.phi_jet(t, x);
        coefficients_from_jet(&j, self.a.at(x))
    }

    /// `A⁽⁴⁾(t, y)`.
    pub fn transformed_tensor(&self, t: f64, y: [f64; 2]) -> Result<[[f64; 2]; 2]> {
        let x = self.phi_inverse(t, y)?;
        Ok(self.coefficients_at(t, x).a4)
    }

    /// `(A⁽⁴⁾, p, q)` at `y` and `g(t, y) = f(t, Φ^{-1}(t, y))`.
    pub fn transformed_coeffs<F: Fn(f64, [f64; 2]) -> f64>(&self, t: f64, y: [f64; 2], f: F) -> Result<(Coefficients, f64)> {
        let x = self.phi_inverse(t, y)?;
        Ok((self.coefficients_at(t, x), f(t, x)))
    }

    /// `c2 = max |s̈⁽¹⁾|` over samples of `[t0, t1]`.
    pub fn c2(&self, t1: f64, n: usize) -> f64 {
        (0..n)
            .map(|i| self.sddot1(self.t0 + (t1 - self.t0) * i as f64 / (n - 1).max(1) as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// Coefficients of the transformed equation at one point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Coefficients {
    pub y: [f64; 2],
    pub a4: [[f64; 2]; 2],
    pub p: [f64; 2],
    pub q: [f64; 2],
    /// `det DΦ`
    pub jac: f64,
}

impl Coefficients {
    /// Conormal `(A⁽⁴⁾)ᵀ n`.
    pub fn conormal(&self, n: [f64; 2]) -> [f64; 2] {
        matvec(dual::transpose(self.a4), n)
    }
}

/// `A⁽⁴⁾ = DΦ A DΦᵀ − Φ̇⊗Φ̇`, `q = −Φ̇`,
/// `p = Φ̈ − div_y(q⊗q) − J B ∇_y J⁻¹` with `B = DΦ A DΦᵀ`, all at `y = Φ(x)`.
pub fn coefficients_from_jet(j: &Jet, a: [[f64; 2]; 2]) -> Coefficients {
    let d = j.dx;
    let dinv = dual::inv(d);
    let b = dual::mat_mul(dual::mat_mul(d, a), dual::transpose(d));
    let v = j.dt;
    let mut a4 = [[0.0; 2]; 2];
    for i in 0..2 {
        for k in 0..2 {
            a4[i][k] = b[i][k] - v[i] * v[k];
        }
    }
    let sym = 0.5 * (a4[0][1] + a4[1][0]);
    a4[0][1] = sym;
    a4[1][0] = sym;
    let q = [-v[0], -v[1]];
    // D_y q = −DΦ̇ DΦ^{-1}
    let dq = dual::mat_mul(j.dtx, dinv);
    let dq = [[-dq[0][0], -dq[0][1]], [-dq[1][0], -dq[1][1]]];
    let divq = dq[0][0] + dq[1][1];
    let mut div_qq = [0.0; 2];
    for jj in 0..2 {
        div_qq[jj] = divq * q[jj] + q[0] * dq[jj][0] + q[1] * dq[jj][1];
    }
    let jac = dual::det(d);
    // ∂_k J = J tr(DΦ^{-1} ∂_k DΦ)
    let mut grad_j = [0.0; 2];
    for (k, gk) in grad_j.iter_mut().enumerate() {
        let mut tr = 0.0;
        for i in 0..2 {
            for a_ in 0..2 {
                tr += dinv[i][a_] * j.dxx[a_][i][k];
            }
        }
        *gk = jac * tr;
    }
    // ∇_y J^{-1} = −DΦ^{-T} ∇_x J / J²
    let g = matvec(dual::transpose(dinv), grad_j);
    let grad_jinv = [-g[0] / (jac * jac), -g[1] / (jac * jac)];
    let bg = matvec(b, grad_jinv);
    let p = [
        j.dtt[0] - div_qq[0] - jac * bg[0],
        j.dtt[1] - div_qq[1] - jac * bg[1],
    ];
    Coefficients { y: j.value, a4, p, q, jac }
}

/// One time sample of the ellipticity audit.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AuditRow {
    pub t: f64,
    pub min_eigenvalue: f64,
    pub worst_x: [f64; 2],
    pub tip_identity_residual: f64,
    pub min_det: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EllipticityAudit {
    pub rows: Vec<AuditRow>,
    pub c4: f64,
    pub tip_identity_max: f64,
    pub min_det: f64,
    pub eta: f64,
    pub rho: f64,
    pub c1: f64,
    pub c2: f64,
    pub pass: bool,
    pub blend_profile: &'static str,
    pub windows: usize,
}

pub const BLEND_PROFILE: &str = "degree-7 smoothstep (C3) in the radial distance";

/// Smallest eigenvalue of `A⁽⁴⁾` over the `(t, x)` samples and the residual
/// `|A⁽⁴⁾(t, 0) − I|` at the tip, each `t` using the window that contains it.
pub fn ellipticity_audit(w: &Windows, times: &[f64], xs: &[[f64; 2]]) -> EllipticityAudit {
    use rayon::prelude::*;
    let rows: Vec<AuditRow> = times
        .par_iter()
        .map(|&t| {
            let p = w.at(t);
            let mut min_e = f64::INFINITY;
            let mut worst = [f64::NAN; 2];
            let mut min_det = f64::INFINITY;
            for &x in xs {
                let c = p.coefficients_at(t, x);
                let e = dual::sym_eigs(c.a4).0;
                if e < min_e {
                    min_e = e;
                    worst = x;
                }
                min_det = min_det.min(c.jac);
            }
            let tip = p.coefficients_at(t, p.tip(t));
            let res = dual::frob([
                [tip.a4[0][0] - 1.0, tip.a4[0][1]],
                [tip.a4[1][0], tip.a4[1][1] - 1.0],
            ]);
            AuditRow { t, min_eigenvalue: min_e, worst_x: worst, tip_identity_residual: res, min_det }
        })
        .collect();
    let c4 = rows.iter().map(|r| r.min_eigenvalue).fold(f64::INFINITY, f64::min);
    let tip_identity_max = rows.iter().map(|r| r.tip_identity_residual).fold(0.0, f64::max);
    let min_det = rows.iter().map(|r| r.min_det).fold(f64::INFINITY, f64::min);
    let mut start = w.pipelines.first().map(|p| p.t0).unwrap_or(0.0);
    let mut rho: f64 = 0.0;
    let mut c2: f64 = 0.0;
    for (p, &end) in w.pipelines.iter().zip(&w.ends) {
        rho = rho.max(end - start);
        c2 = c2.max(p.c2(end, 50));
        start = end;
    }
    let p0 = &w.pipelines[0];
    EllipticityAudit {
        c4,
        tip_identity_max,
        min_det,
        eta: p0.params.eta,
        rho,
        c1: p0.c1,
        c2,
        pass: c4 > 0.0 && tip_identity_max <= 1e-10 && min_det > 0.0,
        blend_profile: BLEND_PROFILE,
        windows: w.pipelines.len(),
        rows,
    }
}

/// Sample grid for the audit: a box grid over the domain (points inside
/// only) plus a box grid around the tip of half-width `local`.
pub fn audit_grid(domain: &Domain, tip: [f64; 2], local: f64, n: usize) -> Vec<[f64; 2]> {
    let (lo, hi) = domain.bbox();
    let mut g: Vec<[f64; 2]> = material::box_grid(lo, hi, n)
        .into_iter()
        .filter(|&x| domain.contains(x) && domain.distance_to_boundary(x) > 1e-9)
        .collect();
    g.extend(
        material::box_grid([tip[0] - local, tip[1] - local], [tip[0] + local, tip[1] + local], n)
            .into_iter()
            .filter(|&x| domain.contains(x)),
    );
    g
}

/// Construction data for a whole run: consecutive windows covering `[0, T]`.
#[derive(Clone, Debug)]
pub struct Windows {
    pub pipelines: Vec<Pipeline>,
    pub ends: Vec<f64>,
}

impl Windows {
    /// Cover `[t_start, t_end]` with windows, each anchored at its start.
    pub fn cover(
        path: &CrackPath,
        law: &GrowthLaw,
        a: &TensorField,
        domain: &Domain,
        eta: f64,
        t_start: f64,
        t_end: f64,
    ) -> Result<Windows> {
        let mut pipelines = Vec::new();
        let mut ends = Vec::new();
        let mut t0 = t_start;
        let kappa = path.max_curvature(400);
        while t0 < t_end {
            let r0 = path.point(law.s(t0));
            let dist = domain.distance_to_boundary(r0);
            let qa = material::spd_sqrt(a.at(r0))?.1;
            let rigid = matches!(path, CrackPath::Segment { .. }) && a.is_constant();
            let params = ChartParams::for_tip(dist * dual::sym_eigs(qa).0, kappa, eta, rigid);
            let p = Pipeline::new(path, law, a, domain, t0, params)?;
            let speed = (0..=50)
                .map(|i| p.sdot1(t0 + (t_end - t0) * i as f64 / 50.0))
                .fold(0.0, f64::max);
            let rho_geom = if speed > 0.0 { 0.5 * dist / speed } else { f64::INFINITY };
            let mut t1 = p.window_end(t_end).min(t0 + rho_geom).min(t_end);
            if t1 <= t0 {
                return Err(Error::Window(format!("no admissible window at t = {t0}")));
            }
            if t_end - t1 < 1e-12 {
                t1 = t_end;
            }
            p.check_window(t1)?;
            pipelines.push(p);
            ends.push(t1);
            t0 = t1;
        }
        Ok(Windows { pipelines, ends })
    }

    /// Pipeline whose window contains `t`.
    pub fn at(&self, t: f64) -> &Pipeline {
        let i = self.ends.iter().position(|&e| t <= e).unwrap_or(self.ends.len() - 1);
        &self.pipelines[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn straight(speed: f64) -> (CrackPath, GrowthLaw, Domain) {
        let path = CrackPath::segment([-1.0, 0.0], 0.0, 2.0);
        let law = GrowthLaw::linear(1.0, speed, 1.0, 1.0, 0.5);
        (path, law, Domain::rectangle([-1.0, -1.0], [1.0, 1.0]))
    }

    fn params(eta: f64) -> ChartParams {
        ChartParams { eta, psi_core: 0.45, psi_outer: 0.9, tube_core: 0.3, tube_outer: 0.6, chi_core: 0.3, chi_outer: 0.6 }
    }

    #[test]
    fn k_eta_values() {
        let eta = 0.4;
        assert_eq!(k_eta(0.5 * eta, eta), 1.0);
        assert_eq!(k_eta(eta, eta), 0.0);
        assert_abs_diff_eq!(k_eta(0.75 * eta, eta), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn straight_crack_closed_form() {
        let (path, law, dom) = straight(0.6);
        let p = Pipeline::new(&path, &law, &TensorField::Identity, &dom, 0.0, params(0.4)).unwrap();
        // s(t) − s(0) = 0.1 at t = 1/6.
        let t = 0.1 / 0.6;
        let y = p.phi::<f64>(t, [0.1, 0.2]);
        assert_abs_diff_eq!(y[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(y[1], 0.2, epsilon = 1e-14);
        let j = p.phi_jet(t, [0.1, 0.2]);
        assert_abs_diff_eq!(j.dx[0][0], 1.0 / 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(j.dx[1][1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(j.dx[0][1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn identity_at_tip() {
        let (path, law, dom) = straight(0.6);
        let p = Pipeline::new(&path, &law, &TensorField::Identity, &dom, 0.0, params(0.05)).unwrap();
        for t in [0.0, 0.1, 0.3] {
            let c = p.coefficients_at(t, p.tip(t));
            assert!((c.a4[0][0] - 1.0).abs() < 1e-12 && (c.a4[1][1] - 1.0).abs() < 1e-12 && c.a4[0][1].abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let (path, law, _) = straight(0.6);
        let dom = Domain::rectangle([-3.0, -3.0], [3.0, 3.0]);
        let p = Pipeline::new(&path, &law, &TensorField::Diagonal { a11: 4.0, a22: 1.0 }, &dom, 0.0, params(0.1)).unwrap();
        for x in [[0.05, 0.02], [-0.3, 0.4], [0.2, -0.15]] {
            let y = p.phi::<f64>(0.2, x);
            let back = p.phi_inverse(0.2, y).unwrap();
            assert!(norm(dual::sub(back, x)) < 1e-10);
        }
    }
}
