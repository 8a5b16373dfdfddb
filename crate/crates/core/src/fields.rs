//! Singular functions `S`, `Ŝ`, the cutoffs `ζ` and `ξ`, the difference field
//! `w = S∘Φ − Ŝ`, and the manufactured displacement with its forcing.

use nalgebra::Complex;
use serde::Serialize;

use crate::charts::{Pipeline, Windows};
use crate::dual::{self, c, j3_parts, j3_vars, lift_m, matvec, norm, radial_cutoff_vec, Real, J3, V2};
use crate::error::{Error, Result};
use crate::geom::{CrackPath, GrowthLaw};
use crate::material::{self, TensorField};
use crate::quad::loglog_slope;

/// `S(y) = Im √(y1 + i y2)`, principal branch, cut along the negative `y1`
/// axis. On the cut the sign of `y2` (including the sign of zero) selects
/// the lip.
pub fn s_value<D: Real>(y: V2<D>) -> D {
    let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
    let rt2 = std::f64::consts::SQRT_2;
    if y[0].re() >= 0.0 {
        y[1] / ((r + y[0]).sqrt() * rt2)
    } else {
        let v = (r - y[0]).sqrt() / rt2;
        if y[1].re().is_sign_negative() {
            -v
        } else {
            v
        }
    }
}

/// Value, gradient and Hessian of `S`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SEval {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

/// `S`, `∇S`, `∇²S` from `f(z) = √z`: `∂1S = Im f'`, `∂2S = Re f'`,
/// `∂11S = −∂22S = Im f''`, `∂12S = Re f''`.
pub fn s_eval(y: [f64; 2]) -> Result<SEval> {
    let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
    if r == 0.0 {
        return Err(Error::Singular("S is singular at y = 0".into()));
    }
    let a = (0.5 * (r + y[0])).sqrt();
    let b = (0.5 * (r - y[0])).sqrt();
    let w = Complex::new(a, if y[1].is_sign_negative() { -b } else { b });
    let z = Complex::new(y[0], y[1]);
    let f1 = 0.5 / w;
    let f2 = -0.25 / (z * w);
    Ok(SEval {
        value: s_value(y),
        grad: [f1.im, f1.re],
        hess: [[f2.im, f2.re], [f2.re, -f2.im]],
    })
}

/// Even C⁵ profile: 1 on `|s| ≤ ε/2`, 0 on `|s| ≥ ε`. The forcing takes two
/// derivatives of it, so C⁵ keeps the integrands C³ for the cubature.
pub fn phi_profile<D: Real>(s: D, eps: f64) -> D {
    let a = if s.re() < 0.0 { -s } else { s };
    c::<D>(1.0) - dual::smoothstep5((a - 0.5 * eps) / (0.5 * eps))
}

/// Cutoffs used by the decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Cutoff {
    /// `ζ`: radial around `center`.
    Radial { center: [f64; 2], inner: f64, outer: f64 },
    /// `ξ(y) = φ(y1) φ(y2)` with plateau half-width `ε/2` and support half-width `ε`.
    Tensor { eps: f64 },
}

impl Cutoff {
    pub fn eval<D: Real>(&self, y: V2<D>) -> D {
        match *self {
            Cutoff::Radial { center, inner, outer } => {
                radial_cutoff_vec(dual::sub(y, dual::lift2(center)), inner, outer)
            }
            Cutoff::Tensor { eps } => phi_profile(y[0], eps) * phi_profile(y[1], eps),
        }
    }

    pub fn at(&self, y: [f64; 2]) -> f64 {
        self.eval(y)
    }
}

/// `Ŝ(t, x) = S(Φ̃(t, x))` with `Φ̃ = L(t) R(t) A^{-1/2}(r(t)) (x − r(t))`,
/// `L = diag(1/α, 1)`, `α = √(1 − ṡ⁽¹⁾²)`, `R` rotating `A^{-1/2}γ'` onto `e1`.
#[derive(Clone, Debug)]
pub struct SingularField {
    pub path: CrackPath,
    pub law: GrowthLaw,
    pub a: TensorField,
    /// Arc length behind the tip over which the lip side is tracked by
    /// projection onto the crack.
    pub track: f64,
}

/// `Ŝ` and its derivatives at one point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ShatEval {
    pub value: f64,
    pub grad: [f64; 2],
    pub dt: f64,
    pub hess: [[f64; 2]; 2],
}

impl SingularField {
    pub fn new(path: &CrackPath, law: &GrowthLaw, a: &TensorField) -> SingularField {
        SingularField { path: path.clone(), law: law.clone(), a: a.clone(), track: path.length() }
    }

    /// `Φ̃(t, x)`.
    pub fn frame_coords<D: Real>(&self, t: D, x: V2<D>) -> V2<D> {
        let s = self.law.s(t);
        let (r, d) = self.path.eval(s);
        let q = material::inv_sqrt_at(&self.a, r);
        let h = matvec(q, d);
        let ch = norm(h);
        let u = dual::scale(ch.recip(), h);
        let v = ch * self.law.sdot(t);
        let alpha = (D::from(1.0) - v * v).sqrt();
        let z = matvec(q, dual::sub(x, r));
        [(u[0] * z[0] + u[1] * z[1]) / alpha, u[0] * z[1] - u[1] * z[0]]
    }

    /// `c_{A,γ'}(t)`.
    pub fn c_tangent(&self, t: f64) -> f64 {
        let s = self.law.s(t);
        let f = self.path.frame_unchecked(s);
        material::c_tangent(&self.a, f.point, f.tangent)
    }

    /// `α(t) / c_{A,γ'}(t)`: the jump across the crack at distance `σ`
    /// behind the tip is `2 √(σ / α_eff)` to leading order.
    pub fn alpha_eff(&self, t: f64) -> f64 {
        let ct = self.c_tangent(t);
        let v = ct * self.law.sdot(t);
        (1.0 - v * v).sqrt() / ct
    }

    /// `−1` where the principal determination disagrees with the lip on
    /// which `x` lies (the crack curves away from its tangent line), else `1`.
    pub fn branch_sign(&self, t: f64, x: [f64; 2], y: [f64; 2]) -> f64 {
        if y[0] >= 0.0 || matches!(self.path, CrackPath::Segment { .. }) {
            return 1.0;
        }
        let st = self.law.s(t);
        let sig = self.path.project(x, (st - self.track).max(0.0), st);
        if sig >= st {
            return 1.0;
        }
        let f = self.path.frame_unchecked(sig);
        let tau = dual::dot(dual::sub(x, f.point), f.normal);
        if tau == 0.0 || (tau > 0.0) == (y[1] >= 0.0) {
            1.0
        } else {
            -1.0
        }
    }

    /// `Ŝ(t, x)` with the lip-consistent determination.
    pub fn value(&self, t: f64, x: [f64; 2]) -> Result<f64> {
        let y = self.frame_coords(t, x);
        if y == [0.0, 0.0] {
            return Err(Error::Singular("Ŝ evaluated at the tip".into()));
        }
        Ok(self.branch_sign(t, x, y) * s_value(y))
    }

    /// Value, gradient, time derivative and spatial Hessian.
    pub fn eval(&self, t: f64, x: [f64; 2]) -> Result<ShatEval> {
        let (tt, xx) = j3_vars(t, x);
        let y = self.frame_coords(tt, xx);
        let yr = dual::re2(y);
        if yr == [0.0, 0.0] {
            return Err(Error::Singular("Ŝ evaluated at the tip".into()));
        }
        let sg = self.branch_sign(t, x, yr);
        let (v, g, h) = j3_parts(s_value(y));
        Ok(ShatEval {
            value: sg * v,
            grad: [sg * g[1], sg * g[2]],
            dt: sg * g[0],
            hess: [[sg * h[1][1], sg * h[1][2]], [sg * h[2][1], sg * h[2][2]]],
        })
    }

    /// Point at which the determination is normalised: `r + α γ'`.
    pub fn anchor(&self, t: f64) -> [f64; 2] {
        let s = self.law.s(t);
        let f = self.path.frame_unchecked(s);
        let v = self.c_tangent(t) * self.law.sdot(t);
        dual::add(f.point, dual::scale((1.0 - v * v).sqrt(), f.tangent))
    }
}

/// `w = S(Φ(t, x)) − Ŝ(t, x)` with gradient and Hessian.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct WEval {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

pub fn w_eval(p: &Pipeline, shat: &SingularField, t: f64, x: [f64; 2]) -> Result<WEval> {
    let (tt, xx) = j3_vars(t, x);
    let y = p.phi(tt, xx);
    if dual::re2(y) == [0.0, 0.0] {
        return Err(Error::Singular("w evaluated at the tip".into()));
    }
    let (v, g, h) = j3_parts(s_value(y));
    let s = shat.eval(t, x)?;
    Ok(WEval {
        value: v - s.value,
        grad: [g[1] - s.grad[0], g[2] - s.grad[1]],
        hess: [
            [h[1][1] - s.hess[0][0], h[1][2] - s.hess[0][1]],
            [h[2][1] - s.hess[1][0], h[2][2] - s.hess[1][1]],
        ],
    })
}

/// Radial scan of `w` around the tip.
#[derive(Clone, Debug, Serialize)]
pub struct WBoundAudit {
    pub t: f64,
    pub radii: Vec<f64>,
    /// `max_θ |∇²w|` at each radius.
    pub hess_max: Vec<f64>,
    /// `max_θ |w|` at each radius.
    pub value_max: Vec<f64>,
    /// Log-log slope of `|∇²w|`; `None` when `w` vanishes identically on the samples.
    pub hess_exponent: Option<f64>,
    pub hess_constant: Option<f64>,
    pub value_exponent: Option<f64>,
    pub pass: bool,
}

/// Below this every sample of `w` is treated as zero.
pub const W_ZERO: f64 = 1e-11;

/// Fit `|∇²w| ≈ C rᵖ` and `|w| ≈ C' r^q` on radii `1e−4 … 1e−1` along rays
/// at the given angles from the tip tangent.
pub fn w_bound_audit(p: &Pipeline, shat: &SingularField, t: f64, angles: &[f64], n_radii: usize) -> Result<WBoundAudit> {
    let s = p.law.s(t);
    let f = p.path.frame(s)?;
    let radii: Vec<f64> = (0..n_radii)
        .map(|i| 10f64.powf(-4.0 + 3.0 * i as f64 / (n_radii - 1).max(1) as f64))
        .collect();
    let mut hess_max = Vec::with_capacity(n_radii);
    let mut value_max = Vec::with_capacity(n_radii);
    for &r in &radii {
        let mut hm: f64 = 0.0;
        let mut vm: f64 = 0.0;
        for &th in angles {
            let d = dual::add(dual::scale(th.cos(), f.tangent), dual::scale(th.sin(), f.normal));
            let x = dual::add(f.point, dual::scale(r, d));
            let w = w_eval(p, shat, t, x)?;
            hm = hm.max(dual::frob(w.hess));
            vm = vm.max(w.value.abs());
        }
        hess_max.push(hm);
        value_max.push(vm);
    }
    let fit = |v: &[f64]| -> Option<(f64, f64)> {
        if v.iter().all(|&e| e < W_ZERO) {
            return None;
        }
        let pts: Vec<(f64, f64)> = radii
            .iter()
            .zip(v)
            .filter(|(_, &e)| e >= W_ZERO)
            .map(|(&r, &e)| (r.ln(), e.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let slope = loglog_slope(&pts);
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        Some((slope, (my - slope * mx).exp()))
    };
    let hfit = fit(&hess_max);
    let vfit = fit(&value_max);
    let pass = hfit.is_none_or(|(e, _)| e >= -0.6) && vfit.is_none_or(|(e, _)| e >= 1.4);
    Ok(WBoundAudit {
        t,
        hess_exponent: hfit.map(|h| h.0),
        hess_constant: hfit.map(|h| h.1),
        value_exponent: vfit.map(|v| v.0),
        radii,
        hess_max,
        value_max,
        pass,
    })
}

/// Time-dependent intensity `k(t) = Σ kᵢ tⁱ`.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intensity {
    pub coeffs: Vec<f64>,
}

impl Intensity {
    pub fn constant(k: f64) -> Intensity {
        Intensity { coeffs: vec![k] }
    }

    pub fn eval<D: Real>(&self, t: D) -> D {
        self.coeffs.iter().rev().fold(D::from(0.0), |acc, &k| acc * t + k)
    }

    pub fn at(&self, t: f64) -> f64 {
        self.eval(t)
    }
}

/// Manufactured displacement `u = k(t) ξ(Φ) S(Φ)` and its derivatives.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct MmsEval {
    pub u: f64,
    pub ut: f64,
    pub grad: [f64; 2],
    pub utt: f64,
    pub grad_t: [f64; 2],
    pub hess: [[f64; 2]; 2],
    /// `div(A∇u)`
    pub div_a_grad: f64,
    /// `ü − div(A∇u)`
    pub f: f64,
}

#[derive(Clone, Debug)]
pub struct Mms {
    pub windows: Windows,
    pub a: TensorField,
    pub k: Intensity,
    pub xi: Cutoff,
}

impl Mms {
    pub fn new(windows: Windows, a: &TensorField, k: Intensity, xi_eps: f64) -> Mms {
        Mms { windows, a: a.clone(), k, xi: Cutoff::Tensor { eps: xi_eps } }
    }

    /// Generic form, for callers differentiating in other variables.
    pub fn u_generic<D: Real>(&self, p: &Pipeline, t: D, x: V2<D>) -> D {
        let y = p.phi(t, x);
        let xi = self.xi.eval(y);
        if xi.re() == 0.0 || (y[0].re() == 0.0 && y[1].re() == 0.0) {
            return D::from(0.0);
        }
        self.k.eval(t) * xi * s_value(y)
    }

    pub fn eval(&self, t: f64, x: [f64; 2]) -> MmsEval {
        let p = self.windows.at(t);
        let (tt, xx) = j3_vars(t, x);
        let u: J3 = self.u_generic(p, tt, xx);
        let (v, g, h) = j3_parts(u);
        if v == 0.0 && g == [0.0; 3] {
            return MmsEval::default();
        }
        let a = self.a.at(x);
        let ga = self.a.grad(x);
        let hess = [[h[1][1], h[1][2]], [h[2][1], h[2][2]]];
        let grad = [g[1], g[2]];
        let mut div = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                div += a[i][j] * hess[i][j] + ga[i][i][j] * grad[j];
            }
        }
        MmsEval {
            u: v,
            ut: g[0],
            grad,
            utt: h[0][0],
            grad_t: [h[0][1], h[0][2]],
            hess,
            div_a_grad: div,
            f: h[0][0] - div,
        }
    }

    /// `u` only.
    pub fn u(&self, t: f64, x: [f64; 2]) -> f64 {
        self.u_generic(self.windows.at(t), t, x)
    }

    /// Energy density `½(u̇² + A∇u·∇u)`.
    pub fn energy_density(&self, t: f64, x: [f64; 2]) -> f64 {
        let p = self.windows.at(t);
        let (tt, xx) = dual::d3_vars(t, x);
        let (_, g) = dual::d3_parts(self.u_generic(p, tt, xx));
        let a = lift_m::<f64>(self.a.at(x));
        let gr = [g[1], g[2]];
        0.5 * (g[0] * g[0] + dual::dot(gr, matvec(a, gr)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn s_reference_values() {
        assert_eq!(s_value([1.0, 0.0]), 0.0);
        let e = s_eval([0.0, 1.0]).unwrap();
        let h = 1.0 / (2.0 * 2f64.sqrt());
        assert_abs_diff_eq!(e.value, 0.5 * 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(e.grad[0], -h, epsilon = 1e-15);
        assert_abs_diff_eq!(e.grad[1], h, epsilon = 1e-15);
        assert_eq!(s_value([-1.0, 0.0]), 1.0);
        assert_eq!(s_value([-1.0, -0.0]), -1.0);
        assert!(s_eval([0.0, 0.0]).is_err());
    }

    #[test]
    fn profile_plateau() {
        assert_eq!(phi_profile(0.04, 0.1), 1.0);
        assert_eq!(phi_profile(-0.1, 0.1), 0.0);
        assert!((phi_profile(0.075f64, 0.1) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn shat_straight_static_is_s() {
        let path = CrackPath::segment([-1.0, 0.0], 0.0, 2.0);
        let law = GrowthLaw::linear(1.0, 0.0, 1.0, 1.0, 0.5);
        let f = SingularField::new(&path, &law, &TensorField::Identity);
        assert_abs_diff_eq!(f.value(0.3, [0.0, 1.0]).unwrap(), 0.5 * 2f64.sqrt(), epsilon = 1e-15);
    }
}
