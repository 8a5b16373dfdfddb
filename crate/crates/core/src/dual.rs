//! Scalar abstraction shared by plain `f64` evaluation and forward-mode
//! automatic differentiation.
//!
//! Every map in the pipeline is written once, generic over [`Real`]. Plugging
//! in [`J3`] (second-order duals in the variables `(t, x1, x2)`) yields the
//! value together with all first and second derivatives, which is what the
//! chain-rule heavy parts of the kit (transformed coefficients, manufactured
//! forcing) consume through [`Jet`].

use num_dual::{Dual2SVec64, DualNum, DualSVec64};

pub trait Real: DualNum<Primitive = f64> + Copy + Send + Sync {}
impl<T: DualNum<Primitive = f64> + Copy + Send + Sync> Real for T {}

pub type V2<D> = [D; 2];
pub type M2<D> = [[D; 2]; 2];

/// Second-order duals in `(t, x1, x2)`.
pub type J3 = Dual2SVec64<3>;
/// First-order duals in `(t, x1, x2)`.
pub type D3 = DualSVec64<3>;
/// First-order duals in two variables, used for Newton Jacobians.
pub type D2 = DualSVec64<2>;

#[inline]
pub fn c<D: Real>(x: f64) -> D {
    D::from(x)
}

#[inline]
pub fn re<D: Real>(x: D) -> f64 {
    x.re()
}

#[inline]
pub fn re2<D: Real>(v: V2<D>) -> [f64; 2] {
    [v[0].re(), v[1].re()]
}

#[inline]
pub fn lift2<D: Real>(v: [f64; 2]) -> V2<D> {
    [c(v[0]), c(v[1])]
}

#[inline]
pub fn dot<D: Real>(a: V2<D>, b: V2<D>) -> D {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm<D: Real>(a: V2<D>) -> D {
    (a[0] * a[0] + a[1] * a[1]).sqrt()
}

#[inline]
pub fn sub<D: Real>(a: V2<D>, b: V2<D>) -> V2<D> {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add<D: Real>(a: V2<D>, b: V2<D>) -> V2<D> {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale<D: Real>(s: D, a: V2<D>) -> V2<D> {
    [s * a[0], s * a[1]]
}

/// Rotation by +90 degrees.
#[inline]
pub fn perp<D: Real>(a: V2<D>) -> V2<D> {
    [-a[1], a[0]]
}

#[inline]
pub fn matvec<D: Real>(m: M2<D>, v: V2<D>) -> V2<D> {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

#[inline]
pub fn lift_m<D: Real>(m: [[f64; 2]; 2]) -> M2<D> {
    [[c(m[0][0]), c(m[0][1])], [c(m[1][0]), c(m[1][1])]]
}

pub fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut r = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    r
}

pub fn transpose(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

pub fn det(a: [[f64; 2]; 2]) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

pub fn inv(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let d = det(a);
    [[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]]
}

pub fn frob(a: [[f64; 2]; 2]) -> f64 {
    (a[0][0].powi(2) + a[0][1].powi(2) + a[1][0].powi(2) + a[1][1].powi(2)).sqrt()
}

/// Eigenvalues `(min, max)` of a symmetric 2x2 matrix.
pub fn sym_eigs(a: [[f64; 2]; 2]) -> (f64, f64) {
    let m = 0.5 * (a[0][0] + a[1][1]);
    let h = 0.5 * (a[0][0] - a[1][1]);
    let off = 0.5 * (a[0][1] + a[1][0]);
    let r = (h * h + off * off).sqrt();
    (m - r, m + r)
}

/// Value, first and second derivatives of a map `(t, x) -> y` in R².
///
/// Index conventions: `dx[a][i] = ∂y_a/∂x_i`, `dtx[a][i] = ∂²y_a/∂t∂x_i`,
/// `dxx[a][i][j] = ∂²y_a/∂x_i∂x_j`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub value: [f64; 2],
    pub dt: [f64; 2],
    pub dx: [[f64; 2]; 2],
    pub dtt: [f64; 2],
    pub dtx: [[f64; 2]; 2],
    pub dxx: [[[f64; 2]; 2]; 2],
}

/// Seed `(t, x1, x2)` as independent second-order variables.
pub fn j3_vars(t: f64, x: [f64; 2]) -> (J3, [J3; 2]) {
    (
        J3::from_re(t).derivative(0),
        [J3::from_re(x[0]).derivative(1), J3::from_re(x[1]).derivative(2)],
    )
}

pub fn d3_vars(t: f64, x: [f64; 2]) -> (D3, [D3; 2]) {
    (
        D3::from_re(t).derivative(0),
        [D3::from_re(x[0]).derivative(1), D3::from_re(x[1]).derivative(2)],
    )
}

/// Gradient and Hessian of a scalar second-order dual in `(t, x1, x2)`.
pub fn j3_parts(v: J3) -> (f64, [f64; 3], [[f64; 3]; 3]) {
    let g = v.v1.unwrap_generic(nalgebra::U1, nalgebra::Const::<3>);
    let h = v.v2.unwrap_generic(nalgebra::Const::<3>, nalgebra::Const::<3>);
    let mut hh = [[0.0; 3]; 3];
    for (i, row) in hh.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            *e = h[(i, j)];
        }
    }
    (v.re, [g[0], g[1], g[2]], hh)
}

pub fn d3_parts(v: D3) -> (f64, [f64; 3]) {
    let g = v.eps.unwrap_generic(nalgebra::Const::<3>, nalgebra::U1);
    (v.re, [g[0], g[1], g[2]])
}

impl Jet {
    pub fn from_j3(y: [J3; 2]) -> Jet {
        let mut j = Jet::default();
        for a in 0..2 {
            let (v, g, h) = j3_parts(y[a]);
            j.value[a] = v;
            j.dt[a] = g[0];
            j.dx[a] = [g[1], g[2]];
            j.dtt[a] = h[0][0];
            j.dtx[a] = [h[0][1], h[0][2]];
            j.dxx[a] = [[h[1][1], h[1][2]], [h[2][1], h[2][2]]];
        }
        j
    }

    pub fn det_dx(&self) -> f64 {
        det(self.dx)
    }
}

/// Evaluate `f` at `(t, x)` and return its jet.
pub fn jet_of<F>(f: F, t: f64, x: [f64; 2]) -> Jet
where
    F: Fn(J3, [J3; 2]) -> [J3; 2],
{
    let (tt, xx) = j3_vars(t, x);
    Jet::from_j3(f(tt, xx))
}

/// Value, spatial Jacobian and time derivative of `f` at `(t, x)`.
pub fn jacobian_of<F>(f: F, t: f64, x: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2], [f64; 2])
where
    F: Fn(D3, [D3; 2]) -> [D3; 2],
{
    let (tt, xx) = d3_vars(t, x);
    let y = f(tt, xx);
    let (v0, g0) = d3_parts(y[0]);
    let (v1, g1) = d3_parts(y[1]);
    ([v0, v1], [[g0[1], g0[2]], [g1[1], g1[2]]], [g0[0], g1[0]])
}

/// Smooth step `h: [0,1] -> [0,1]` with vanishing first three derivatives at
/// both ends (degree-7 polynomial); constant outside the unit interval.
pub fn smoothstep<D: Real>(s: D) -> D {
    let r = s.re();
    if r <= 0.0 {
        return c(0.0);
    }
    if r >= 1.0 {
        return c(1.0);
    }
    let s2 = s * s;
    let s4 = s2 * s2;
    s4 * (c::<D>(35.0) + s * (c::<D>(-84.0) + s * (c::<D>(70.0) - s * 20.0)))
}

/// C⁵ smooth step (degree 11): first five derivatives vanish at both ends.
pub fn smoothstep5<D: Real>(s: D) -> D {
    let r = s.re();
    if r <= 0.0 {
        return c(0.0);
    }
    if r >= 1.0 {
        return c(1.0);
    }
    let s2 = s * s;
    let s6 = s2 * s2 * s2;
    let p = c::<D>(1386.0) + s * -252.0;
    let p = c::<D>(-3080.0) + s * p;
    let p = c::<D>(3465.0) + s * p;
    let p = c::<D>(-1980.0) + s * p;
    s6 * (c::<D>(462.0) + s * p)
}

/// Radial C³ cutoff: 1 for `r <= r_in`, 0 for `r >= r_out`.
pub fn radial_cutoff<D: Real>(r: D, r_in: f64, r_out: f64) -> D {
    c::<D>(1.0) - smoothstep((r - r_in) / (r_out - r_in))
}

/// Same cutoff evaluated on a vector, without forming `|x|` inside the plateau
/// (keeps derivatives finite at the origin).
pub fn radial_cutoff_vec<D: Real>(x: V2<D>, r_in: f64, r_out: f64) -> D {
    let r2 = x[0].re() * x[0].re() + x[1].re() * x[1].re();
    if r2 <= r_in * r_in {
        return c(1.0);
    }
    if r2 >= r_out * r_out {
        return c(0.0);
    }
    radial_cutoff(norm(x), r_in, r_out)
}

/// Deterministic pairwise (cascade) summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let m = v.len() / 2;
    pairwise_sum(&v[..m]) + pairwise_sum(&v[m..])
}
