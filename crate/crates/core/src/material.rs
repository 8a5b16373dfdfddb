//! Coefficient field `A(x)`, closed-form square roots of 2x2 SPD matrices and
//! the tip quantities that depend on `A`: the anisotropy factor `a(t)` and the
//! transported speed.

use serde::{Deserialize, Serialize};

use crate::dual::{self, c, matvec, norm, Real, D3, M2, V2};
use crate::error::{Error, Result};
use crate::geom::{CrackPath, GrowthLaw};

/// Built-in coefficient fields. All are smooth, so spatial derivatives are
/// obtained exactly by forward-mode differentiation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TensorField {
    Identity,
    Diagonal { a11: f64, a22: f64 },
    Constant { m: [[f64; 2]; 2] },
    /// `I + amplitude * sin(x1) * diag(1, -1)`.
    SinPerturbed { amplitude: f64 },
    /// `factor * inner`.
    Scaled { factor: f64, inner: Box<TensorField> },
}

impl TensorField {
    pub fn eval<D: Real>(&self, x: V2<D>) -> M2<D> {
        match self {
            TensorField::Identity => [[c(1.0), c(0.0)], [c(0.0), c(1.0)]],
            TensorField::Diagonal { a11, a22 } => [[c(*a11), c(0.0)], [c(0.0), c(*a22)]],
            TensorField::Constant { m } => {
                let off = 0.5 * (m[0][1] + m[1][0]);
                [[c(m[0][0]), c(off)], [c(off), c(m[1][1])]]
            }
            TensorField::SinPerturbed { amplitude } => {
                let s = x[0].sin() * *amplitude;
                [[s + 1.0, c(0.0)], [c(0.0), -s + 1.0]]
            }
            TensorField::Scaled { factor, inner } => {
                let m = inner.eval(x);
                [[m[0][0] * *factor, m[0][1] * *factor], [m[1][0] * *factor, m[1][1] * *factor]]
            }
        }
    }

    pub fn at(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        self.eval::<f64>(x)
    }

    pub fn is_identity(&self) -> bool {
        match self {
            TensorField::Identity => true,
            TensorField::Diagonal { a11, a22 } => *a11 == 1.0 && *a22 == 1.0,
            TensorField::Scaled { factor, inner } => *factor == 1.0 && inner.is_identity(),
            _ => false,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            TensorField::SinPerturbed { amplitude } => *amplitude == 0.0,
            TensorField::Scaled { inner, .. } => inner.is_constant(),
            _ => true,
        }
    }

    pub fn scaled(&self, factor: f64) -> TensorField {
        TensorField::Scaled { factor, inner: Box::new(self.clone()) }
    }

    /// Spatial derivatives `out[k] = ∂_k A`.
    pub fn grad(&self, x: [f64; 2]) -> [[[f64; 2]; 2]; 2] {
        let (_, xx) = dual::d3_vars(0.0, x);
        let m: M2<D3> = self.eval(xx);
        let mut out = [[[0.0; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let (_, g) = dual::d3_parts(m[i][j]);
                out[0][i][j] = g[1];
                out[1][i][j] = g[2];
            }
        }
        out
    }

    /// Central-difference derivatives with step `h`; kept as an independent
    /// check of [`TensorField::grad`].
    pub fn grad_fd(&self, x: [f64; 2], h: f64) -> [[[f64; 2]; 2]; 2] {
        let mut out = [[[0.0; 2]; 2]; 2];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let ap = self.at(xp);
            let am = self.at(xm);
            for i in 0..2 {
                for j in 0..2 {
                    slot[i][j] = (ap[i][j] - am[i][j]) / (2.0 * h);
                }
            }
        }
        out
    }
}

/// `(M^{1/2}, M^{-1/2})` for a symmetric positive definite 2x2 matrix, by the
/// Cayley-Hamilton identity `√M = (M + √det M · I) / √(tr M + 2√det M)`.
///
/// Valid for dual arguments whose real part is SPD; see [`spd_sqrt`] for the
/// checked `f64` version.
pub fn sqrt_pair<D: Real>(m: M2<D>) -> (M2<D>, M2<D>) {
    let off = (m[0][1] + m[1][0]) * 0.5;
    let det = m[0][0] * m[1][1] - off * off;
    let s = det.sqrt();
    let t = (m[0][0] + m[1][1] + s * 2.0).sqrt();
    let half = [[(m[0][0] + s) / t, off / t], [off / t, (m[1][1] + s) / t]];
    let ts = t * s;
    let mhalf = [[(m[1][1] + s) / ts, -off / ts], [-off / ts, (m[0][0] + s) / ts]];
    (half, mhalf)
}

/// `(A^{1/2}, A^{-1/2})`.
pub type SqrtPair = ([[f64; 2]; 2], [[f64; 2]; 2]);

pub fn spd_sqrt(m: [[f64; 2]; 2]) -> Result<SqrtPair> {
    if !m.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::MatrixDomain { eigenvalue: f64::NAN });
    }
    let scale = dual::frob(m).max(f64::MIN_POSITIVE);
    if (m[0][1] - m[1][0]).abs() > 1e-14 * scale {
        return Err(Error::Validation(format!(
            "matrix not symmetric: A12 - A21 = {:e}",
            m[0][1] - m[1][0]
        )));
    }
    let (lo, _) = dual::sym_eigs(m);
    if lo <= 0.0 {
        return Err(Error::MatrixDomain { eigenvalue: lo });
    }
    Ok(sqrt_pair::<f64>(m))
}

/// `Q = A^{-1/2}` at `x`.
pub fn inv_sqrt_at<D: Real>(a: &TensorField, x: V2<D>) -> M2<D> {
    sqrt_pair(a.eval(x)).1
}

/// Anisotropy factor `a(t) = |A^{-1/2}γ'|·|A^{1/2}n|·√det A` at the tip `r(t)`.
pub fn a_factor(t: f64, path: &CrackPath, law: &GrowthLaw, a: &TensorField) -> Result<f64> {
    let s = law.eval(t)?.0;
    let f = path.frame(s)?;
    Ok(a_factor_at(a, f.point, f.tangent, f.normal))
}

pub fn a_factor_at(a: &TensorField, r: [f64; 2], tangent: [f64; 2], normal: [f64; 2]) -> f64 {
    let m = a.at(r);
    let (half, mhalf) = sqrt_pair::<f64>(m);
    norm(matvec(mhalf, tangent)) * norm(matvec(half, normal)) * dual::det(m).sqrt()
}

/// `c_{A,γ'} = |A^{-1/2}(r) γ'|`.
pub fn c_tangent(a: &TensorField, r: [f64; 2], tangent: [f64; 2]) -> f64 {
    norm(matvec(sqrt_pair::<f64>(a.at(r)).1, tangent))
}

/// `c_{A,n} = |A^{1/2}(r) n|`.
pub fn c_normal(a: &TensorField, r: [f64; 2], normal: [f64; 2]) -> f64 {
    norm(matvec(sqrt_pair::<f64>(a.at(r)).0, normal))
}

/// Tip speed seen in the coordinates where `A` is the identity on the crack:
/// `ṡ⁽¹⁾(t) = |A^{-1/2}(r(t)) γ'(s(t))| ṡ(t)`.
pub fn transported_speed(t: f64, path: &CrackPath, law: &GrowthLaw, a: &TensorField) -> Result<f64> {
    let (s, sd, _) = law.eval(t)?;
    let f = path.frame(s)?;
    Ok(c_tangent(a, f.point, f.tangent) * sd)
}

/// Smallest eigenvalue of `A` over the sample points.
pub fn ellipticity_margin(a: &TensorField, grid: &[[f64; 2]]) -> f64 {
    grid.iter()
        .map(|&x| dual::sym_eigs(a.at(x)).0)
        .fold(f64::INFINITY, f64::min)
}

/// `n x n` tensor grid over the box `[lo, hi]` (inclusive of the corners).
pub fn box_grid(lo: [f64; 2], hi: [f64; 2], n: usize) -> Vec<[f64; 2]> {
    let mut g = Vec::with_capacity(n * n);
    let step = |k: usize, i: usize| {
        if n == 1 {
            0.5 * (lo[k] + hi[k])
        } else {
            lo[k] + (hi[k] - lo[k]) * i as f64 / (n - 1) as f64
        }
    };
    for i in 0..n {
        for j in 0..n {
            g.push([step(0, i), step(1, j)]);
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        dual::mat_mul(a, b)
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let (h, mh) = spd_sqrt([[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(h, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(mh, [[1.0, 0.0], [0.0, 1.0]]);
        let (h, mh) = spd_sqrt([[4.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(h[0][0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h[1][1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mh[0][0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(mh[1][1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sqrt_matches_eigendecomposition() {
        // Eigenvalues 1 and 3 with eigenvectors (1,-1)/√2 and (1,1)/√2.
        let m = [[2.0, 1.0], [1.0, 2.0]];
        let (h, _) = spd_sqrt(m).unwrap();
        let r3 = 3f64.sqrt();
        let oracle = [[(1.0 + r3) / 2.0, (r3 - 1.0) / 2.0], [(r3 - 1.0) / 2.0, (1.0 + r3) / 2.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(h[i][j], oracle[i][j], epsilon = 1e-14);
            }
        }
        let rr = mul(h, h);
        let err = dual::frob([[rr[0][0] - 2.0, rr[0][1] - 1.0], [rr[1][0] - 1.0, rr[1][1] - 2.0]]);
        assert!(err <= 1e-12);
    }

    #[test]
    fn non_spd_is_rejected_with_eigenvalue() {
        match spd_sqrt([[1.0, 2.0], [2.0, 1.0]]) {
            Err(Error::MatrixDomain { eigenvalue }) => assert_abs_diff_eq!(eigenvalue, -1.0, epsilon = 1e-14),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let a = TensorField::SinPerturbed { amplitude: 0.5 };
        let x = [0.7, -0.2];
        let g = a.grad(x);
        let f = a.grad_fd(x, 1e-6);
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(g[k][i][j], f[k][i][j], epsilon = 1e-8);
                }
            }
        }
        assert_abs_diff_eq!(g[0][0][0], 0.5 * 0.7f64.cos(), epsilon = 1e-15);
    }

    #[test]
    fn a_factor_closed_forms() {
        let d = TensorField::Diagonal { a11: 4.0, a22: 1.0 };
        assert_eq!(a_factor_at(&TensorField::Identity, [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]), 1.0);
        assert_abs_diff_eq!(a_factor_at(&d, [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a_factor_at(&d, [0.0, 0.0], [0.0, 1.0], [-1.0, 0.0]), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn ellipticity_margin_of_sine_field() {
        let a = TensorField::SinPerturbed { amplitude: 0.5 };
        let pi = std::f64::consts::PI;
        let g = box_grid([0.0, 0.0], [pi, pi], 101);
        assert_abs_diff_eq!(ellipticity_margin(&a, &g), 0.5, epsilon = 1e-12);
        assert_eq!(ellipticity_margin(&TensorField::Identity, &g), 1.0);
        assert_eq!(ellipticity_margin(&TensorField::Diagonal { a11: 4.0, a22: 1.0 }, &g), 1.0);
    }
}
