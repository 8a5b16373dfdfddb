//! Domain, crack path and growth law.
//!
//! Paths are parametrised by arc length. Straight segments and circular arcs
//! have closed-form evaluators; anything else is represented by a clamped
//! quintic spline that is reparametrised by arc length at construction.

use nalgebra::{DMatrix, DVector};
use num_dual::Dual2_64;
use serde::{Deserialize, Serialize};

use crate::dual::{self, c, Real, V2};
use crate::error::{Error, Result};
use crate::material::{self, TensorField};
use crate::quad::gk::{self, QuadOptions};

/// Simple closed polygon, counter-clockwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub vertices: Vec<[f64; 2]>,
    /// One flag per edge `(v_i, v_{i+1})`; empty means pure Neumann.
    #[serde(default)]
    pub dirichlet: Vec<bool>,
}

impl Domain {
    pub fn new(vertices: Vec<[f64; 2]>, dirichlet: Vec<bool>) -> Result<Domain> {
        let d = Domain { vertices, dirichlet };
        d.check()?;
        Ok(d)
    }

    pub fn rectangle(lo: [f64; 2], hi: [f64; 2]) -> Domain {
        Domain {
            vertices: vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]],
            dirichlet: Vec::new(),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(Error::Geometry("polygon needs at least three vertices".into()));
        }
        if !self.dirichlet.is_empty() && self.dirichlet.len() != n {
            return Err(Error::Geometry(format!(
                "{} Dirichlet flags for {} edges",
                self.dirichlet.len(),
                n
            )));
        }
        if self.signed_area() <= 0.0 {
            return Err(Error::Geometry("polygon must be counter-clockwise with positive area".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = self.edge(i);
                let (p, q) = self.edge(j);
                if segments_intersect(a, b, p, q) {
                    return Err(Error::Geometry(format!("edges {i} and {j} intersect")));
                }
            }
        }
        Ok(())
    }

    pub fn edge(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        let n = self.vertices.len();
        (self.vertices[i], self.vertices[(i + 1) % n])
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = self.edge(i);
                a[0] * b[1] - a[1] * b[0]
            })
            .sum::<f64>()
            * 0.5
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for a in &self.vertices {
            for b in &self.vertices {
                d = d.max(dual::norm(dual::sub(*a, *b)));
            }
        }
        d
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let (a, b) = self.edge(i);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn distance_to_boundary(&self, p: [f64; 2]) -> f64 {
        (0..self.vertices.len())
            .map(|i| {
                let (a, b) = self.edge(i);
                point_segment_distance(p, a, b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) >= -1e-14
        })
    }
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = dual::sub(b, a);
    let ap = dual::sub(p, a);
    let l2 = dual::dot(ab, ab);
    let t = if l2 > 0.0 { (dual::dot(ap, ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    dual::norm(dual::sub(p, dual::add(a, dual::scale(t, ab))))
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Proper or touching intersection of two closed segments.
pub fn segments_intersect(a: [f64; 2], b: [f64; 2], p: [f64; 2], q: [f64; 2]) -> bool {
    let d1 = orient(p, q, a);
    let d2 = orient(p, q, b);
    let d3 = orient(a, b, p);
    let d4 = orient(a, b, q);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        c[0] >= a[0].min(b[0]) && c[0] <= a[0].max(b[0]) && c[1] >= a[1].min(b[1]) && c[1] <= a[1].max(b[1])
    };
    (d1 == 0.0 && on(p, q, a)) || (d2 == 0.0 && on(p, q, b)) || (d3 == 0.0 && on(a, b, p)) || (d4 == 0.0 && on(a, b, q))
}

/// Piecewise quintic in one variable, `C⁴` at the knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuinticSpline {
    pub knots: Vec<f64>,
    /// Per interval and component, coefficients of `(σ - σ_i)^k`, `k = 0..=5`.
    pub coeffs: Vec<[[f64; 6]; 2]>,
}

impl QuinticSpline {
    /// Interpolate `points` at `knots` with clamped first and second derivatives
    /// at both ends, enforcing continuity of the third and fourth derivatives.
    pub fn interpolate(
        knots: &[f64],
        points: &[[f64; 2]],
        start: ([f64; 2], [f64; 2]),
        end: ([f64; 2], [f64; 2]),
    ) -> Result<QuinticSpline> {
        let n = knots.len();
        if n < 2 || points.len() != n {
            return Err(Error::Parameter("spline needs at least two knots and one point per knot".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("spline knots must increase strictly".into()));
        }
        let mut coeffs = vec![[[0.0; 6]; 2]; n - 1];
        for comp in 0..2 {
            let y: Vec<f64> = points.iter().map(|p| p[comp]).collect();
            let (m, mm) = solve_slopes(knots, &y, (start.0[comp], start.1[comp]), (end.0[comp], end.1[comp]))?;
            for i in 0..n - 1 {
                let h = knots[i + 1] - knots[i];
                coeffs[i][comp] = hermite5(h, [y[i], m[i], mm[i], y[i + 1], m[i + 1], mm[i + 1]]);
            }
        }
        Ok(QuinticSpline { knots: knots.to_vec(), coeffs })
    }

    fn interval(&self, x: f64) -> usize {
        let n = self.knots.len();
        match self.knots.binary_search_by(|k| k.total_cmp(&x)) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    pub fn eval<D: Real>(&self, x: D) -> (V2<D>, V2<D>) {
        let i = self.interval(x.re());
        let dx = x - self.knots[i];
        let mut p = [c::<D>(0.0); 2];
        let mut d = [c::<D>(0.0); 2];
        for comp in 0..2 {
            let a = &self.coeffs[i][comp];
            let mut v = c::<D>(a[5]);
            for k in (0..5).rev() {
                v = v * dx + a[k];
            }
            let mut w = c::<D>(5.0 * a[5]);
            for k in (1..5).rev() {
                w = w * dx + a[k] * k as f64;
            }
            p[comp] = v;
            d[comp] = w;
        }
        (p, d)
    }
}

/// Coefficients of the quintic on `[0, h]` matching value, slope and second
/// derivative at both ends.
fn hermite5(h: f64, d: [f64; 6]) -> [f64; 6] {
    let [y0, m0, mm0, y1, m1, mm1] = d;
    let r0 = y1 - y0 - m0 * h - 0.5 * mm0 * h * h;
    let r1 = m1 - m0 - mm0 * h;
    let r2 = mm1 - mm0;
    let h2 = h * h;
    [
        y0,
        m0,
        0.5 * mm0,
        (20.0 * r0 - 8.0 * r1 * h + r2 * h2) / (2.0 * h2 * h),
        (-30.0 * r0 + 14.0 * r1 * h - 2.0 * r2 * h2) / (2.0 * h2 * h2),
        (12.0 * r0 - 6.0 * r1 * h + r2 * h2) / (2.0 * h2 * h2 * h),
    ]
}

/// Third and fourth derivatives at both ends of a Hermite quintic:
/// `[p'''(0), p'''(h), p''''(0), p''''(h)]`.
fn end_derivs(h: f64, d: [f64; 6]) -> [f64; 4] {
    let a = hermite5(h, d);
    [
        6.0 * a[3],
        6.0 * a[3] + 24.0 * a[4] * h + 60.0 * a[5] * h * h,
        24.0 * a[4],
        24.0 * a[4] + 120.0 * a[5] * h,
    ]
}

fn solve_slopes(knots: &[f64], y: &[f64], start: (f64, f64), end: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = knots.len();
    let mut m = vec![0.0; n];
    let mut mm = vec![0.0; n];
    m[0] = start.0;
    mm[0] = start.1;
    m[n - 1] = end.0;
    mm[n - 1] = end.1;
    if n == 2 {
        return Ok((m, mm));
    }
    let nu = 2 * (n - 2);
    let mut mat = DMatrix::<f64>::zeros(nu, nu);
    let mut rhs = DVector::<f64>::zeros(nu);
    // Unknown index of (m_j, M_j) for interior knot j.
    let col = |j: usize, which: usize| 2 * (j - 1) + which;
    for i in 1..n - 1 {
        let hl = knots[i] - knots[i - 1];
        let hr = knots[i + 1] - knots[i];
        for (row_off, (dl, dr)) in [(1usize, 0usize), (3, 2)].iter().enumerate() {
            let row = 2 * (i - 1) + row_off;
            // left interval data (i-1, i), right interval data (i, i+1)
            for slot in 0..6 {
                let mut e = [0.0; 6];
                e[slot] = 1.0;
                let vl = end_derivs(hl, e)[*dl];
                let vr = end_derivs(hr, e)[*dr];
                // left interval: knot i-1 for slots 0..3, knot i for 3..6
                let (kl, wl) = if slot < 3 { (i - 1, slot) } else { (i, slot - 3) };
                let (kr, wr) = if slot < 3 { (i, slot) } else { (i + 1, slot - 3) };
                for (k, w, v) in [(kl, wl, vl), (kr, wr, -vr)] {
                    match w {
                        0 => rhs[row] -= v * y[k],
                        _ => {
                            let which = w - 1;
                            if k == 0 || k == n - 1 {
                                let known = if which == 0 { m[k] } else { mm[k] };
                                rhs[row] -= v * known;
                            } else {
                                mat[(row, col(k, which))] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    let sol = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Parameter("singular spline system".into()))?;
    for j in 1..n - 1 {
        m[j] = sol[col(j, 0)];
        mm[j] = sol[col(j, 1)];
    }
    Ok((m, mm))
}

/// Point and arc-length frame on the path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Frame {
    pub point: [f64; 2],
    pub tangent: [f64; 2],
    pub normal: [f64; 2],
    /// `γ''`
    pub second: [f64; 2],
    /// `γ'''`
    pub third: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSpec {
    /// `γ(σ) = start + σ (cos heading, sin heading)`.
    Segment { start: [f64; 2], heading: f64, length: f64 },
    /// Circular arc leaving `start` with direction `heading`, turning left
    /// (`left = true`) or right.
    Arc { start: [f64; 2], heading: f64, radius: f64, length: f64, #[serde(default = "yes")] left: bool },
    /// Quintic spline through the points (chord-length parametrised, then
    /// reparametrised by arc length).
    Spline { points: Vec<[f64; 2]>, #[serde(default = "default_knots")] knots: usize },
    /// Quintic spline fit of a circular arc; exercises the spline code path on
    /// a curve with a known closed form.
    ArcSpline { start: [f64; 2], heading: f64, radius: f64, length: f64, #[serde(default = "yes")] left: bool, #[serde(default = "default_knots")] knots: usize },
}

fn yes() -> bool {
    true
}
fn default_knots() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CrackPath {
    Segment { start: [f64; 2], dir: [f64; 2], length: f64 },
    Arc { start: [f64; 2], t0: [f64; 2], radius: f64, sign: f64, length: f64 },
    Spline { spline: QuinticSpline, length: f64 },
}

impl CrackPath {
    pub fn from_spec(spec: &PathSpec) -> Result<CrackPath> {
        match spec {
            PathSpec::Segment { start, heading, length } => Ok(CrackPath::segment(*start, *heading, *length)),
            PathSpec::Arc { start, heading, radius, length, left } => {
                Ok(CrackPath::arc(*start, *heading, *radius, *length, *left))
            }
            PathSpec::Spline { points, knots } => CrackPath::spline_through(points, *knots),
            PathSpec::ArcSpline { start, heading, radius, length, left, knots } => {
                let arc = CrackPath::arc(*start, *heading, *radius, *length, *left);
                CrackPath::spline_from_curve(|u| arc.frame_unchecked(u), 0.0, *length, *knots)
            }
        }
    }

    pub fn segment(start: [f64; 2], heading: f64, length: f64) -> CrackPath {
        CrackPath::Segment { start, dir: [heading.cos(), heading.sin()], length }
    }

    pub fn arc(start: [f64; 2], heading: f64, radius: f64, length: f64, left: bool) -> CrackPath {
        CrackPath::Arc {
            start,
            t0: [heading.cos(), heading.sin()],
            radius,
            sign: if left { 1.0 } else { -1.0 },
            length,
        }
    }

    pub fn length(&self) -> f64 {
        match self {
            CrackPath::Segment { length, .. } | CrackPath::Arc { length, .. } | CrackPath::Spline { length, .. } => *length,
        }
    }

    /// `(γ(σ), γ'(σ))` for any scalar type; no range check.
    pub fn eval<D: Real>(&self, s: D) -> (V2<D>, V2<D>) {
        match self {
            CrackPath::Segment { start, dir, .. } => (
                [s * dir[0] + start[0], s * dir[1] + start[1]],
                [c(dir[0]), c(dir[1])],
            ),
            CrackPath::Arc { start, t0, radius, sign, .. } => {
                let th = s / *radius;
                let (sn, cs) = th.sin_cos();
                let n0 = [-t0[1] * sign, t0[0] * sign];
                let p = [
                    sn * (radius * t0[0]) - (cs - 1.0) * (radius * n0[0]) + start[0],
                    sn * (radius * t0[1]) - (cs - 1.0) * (radius * n0[1]) + start[1],
                ];
                let d = [cs * t0[0] + sn * n0[0], cs * t0[1] + sn * n0[1]];
                (p, d)
            }
            CrackPath::Spline { spline, .. } => spline.eval(s),
        }
    }

    pub fn point(&self, s: f64) -> [f64; 2] {
        self.eval::<f64>(s).0
    }

    pub fn frame_unchecked(&self, s: f64) -> Frame {
        let (p, _) = self.eval::<f64>(s);
        let (_, d) = self.eval(Dual2_64::from_re(s).derivative());
        let tangent = [d[0].re, d[1].re];
        Frame {
            point: p,
            tangent,
            normal: dual::perp(tangent),
            second: [d[0].v1, d[1].v1],
            third: [d[0].v2, d[1].v2],
        }
    }

    /// Point and frame at arc length `σ ∈ [0, ℓ]`.
    pub fn frame(&self, s: f64) -> Result<Frame> {
        let l = self.length();
        if !(0.0..=l).contains(&s) {
            return Err(Error::Range { what: "arc length", value: s, lo: 0.0, hi: l });
        }
        Ok(self.frame_unchecked(s))
    }

    /// Clamped quintic spline of an arbitrary regular curve `u ↦ f(u)`,
    /// reparametrised by arc length. `f` returns a [`Frame`]-like triple whose
    /// `tangent` and `second` fields hold `f'(u)` and `f''(u)`.
    pub fn spline_from_curve<F: Fn(f64) -> Frame>(f: F, u0: f64, u1: f64, knots: usize) -> Result<CrackPath> {
        let knots = knots.max(2);
        let speed = |u: f64| dual::norm(f(u).tangent);
        let opts = QuadOptions { abs_tol: 1e-14, rel_tol: 1e-14, max_panels: 2000 };
        let total = gk::integrate(speed, u0, u1, opts).value;
        let mut us = vec![u0];
        let mut u = u0;
        let mut acc = 0.0;
        for k in 1..knots - 1 {
            let target = total * k as f64 / (knots - 1) as f64;
            // Newton on S(u) = target, integrating the speed from the previous root.
            let mut x = u + (target - acc) / speed(u).max(1e-300);
            for _ in 0..50 {
                let sx = acc + gk::integrate(speed, u, x, opts).value;
                let dx = (sx - target) / speed(x);
                x -= dx;
                if dx.abs() < 1e-15 * (1.0 + x.abs()) {
                    break;
                }
            }
            acc += gk::integrate(speed, u, x, opts).value;
            u = x;
            us.push(u);
        }
        us.push(u1);
        let sig: Vec<f64> = (0..knots).map(|k| total * k as f64 / (knots - 1) as f64).collect();
        let pts: Vec<[f64; 2]> = us.iter().map(|&u| f(u).point).collect();
        let ends = |u: f64| {
            let fr = f(u);
            let sp = dual::norm(fr.tangent);
            let t = dual::scale(1.0 / sp, fr.tangent);
            let a = fr.second;
            let along = dual::dot(a, t);
            let k = dual::scale(1.0 / (sp * sp), dual::sub(a, dual::scale(along, t)));
            (t, k)
        };
        let spline = QuinticSpline::interpolate(&sig, &pts, ends(u0), ends(u1))?;
        Ok(CrackPath::Spline { spline, length: total })
    }

    /// Spline through `points`: a chord-parametrised quintic first, then an
    /// arc-length reparametrisation with `knots` knots.
    pub fn spline_through(points: &[[f64; 2]], knots: usize) -> Result<CrackPath> {
        if points.len() < 2 {
            return Err(Error::Parameter("need at least two points".into()));
        }
        let mut u = vec![0.0];
        for w in points.windows(2) {
            let d = dual::norm(dual::sub(w[1], w[0]));
            if d == 0.0 {
                return Err(Error::Parameter("repeated spline point".into()));
            }
            u.push(u.last().copied().unwrap_or(0.0) + d);
        }
        let n = points.len();
        let chord = |a: usize, b: usize| {
            let d = dual::sub(points[b], points[a]);
            dual::scale(1.0 / (u[b] - u[a]), d)
        };
        let first = QuinticSpline::interpolate(&u, points, (chord(0, 1), [0.0; 2]), (chord(n - 2, n - 1), [0.0; 2]))?;
        let f = |x: f64| {
            let (p, _) = first.eval::<f64>(x);
            let (_, d) = first.eval(Dual2_64::from_re(x).derivative());
            Frame {
                point: p,
                tangent: [d[0].re, d[1].re],
                normal: [0.0; 2],
                second: [d[0].v1, d[1].v1],
                third: [d[0].v2, d[1].v2],
            }
        };
        CrackPath::spline_from_curve(f, 0.0, u[n - 1], knots)
    }

    /// Largest deviation of `|γ'|` from 1 over `n` uniform samples.
    pub fn arc_length_defect(&self, n: usize) -> f64 {
        let l = self.length();
        (0..n)
            .map(|i| {
                let s = l * i as f64 / (n - 1).max(1) as f64;
                (dual::norm(self.eval::<f64>(s).1) - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn max_curvature(&self, n: usize) -> f64 {
        let l = self.length();
        (0..n)
            .map(|i| dual::norm(self.frame_unchecked(l * i as f64 / (n - 1).max(1) as f64).second))
            .fold(0.0, f64::max)
    }

    /// Pairwise intersection test on an `n`-point polyline.
    pub fn is_simple(&self, n: usize) -> bool {
        let l = self.length();
        let pts: Vec<[f64; 2]> = (0..n).map(|i| self.point(l * i as f64 / (n - 1) as f64)).collect();
        let m = pts.len() - 1;
        for i in 0..m {
            for j in (i + 2)..m {
                if segments_intersect(pts[i], pts[i + 1], pts[j], pts[j + 1]) {
                    return false;
                }
            }
        }
        true
    }

    /// Nearest arc-length parameter to `x`, searched in `[lo, hi]`.
    pub fn project(&self, x: [f64; 2], lo: f64, hi: f64) -> f64 {
        let n = 64;
        let mut best = lo;
        let mut bd = f64::INFINITY;
        for i in 0..=n {
            let s = lo + (hi - lo) * i as f64 / n as f64;
            let d = dual::norm(dual::sub(self.point(s), x));
            if d < bd {
                bd = d;
                best = s;
            }
        }
        let mut s = best;
        for _ in 0..50 {
            let f = self.frame_unchecked(s);
            let r = dual::sub(f.point, x);
            let g = dual::dot(r, f.tangent);
            let h = 1.0 + dual::dot(r, f.second);
            let step = g / if h.abs() > 1e-12 { h } else { 1.0 };
            let ns = (s - step).clamp(lo, hi);
            if (ns - s).abs() < 1e-15 {
                s = ns;
                break;
            }
            s = ns;
        }
        s
    }
}

/// Growth law `s(t) = Σ coeffs[k] t^k` on `[0, t_end]` with the speed bound
/// `ṡ² ≤ c0 − δ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthLaw {
    pub coeffs: Vec<f64>,
    pub t_end: f64,
    pub c0: f64,
    pub delta: f64,
}

impl GrowthLaw {
    pub fn polynomial(coeffs: Vec<f64>, t_end: f64, c0: f64, delta: f64) -> GrowthLaw {
        GrowthLaw { coeffs, t_end, c0, delta }
    }

    pub fn linear(s0: f64, speed: f64, t_end: f64, c0: f64, delta: f64) -> GrowthLaw {
        GrowthLaw::polynomial(vec![s0, speed], t_end, c0, delta)
    }

    pub fn s<D: Real>(&self, t: D) -> D {
        let mut v = c::<D>(0.0);
        for &a in self.coeffs.iter().rev() {
            v = v * t + a;
        }
        v
    }

    pub fn sdot<D: Real>(&self, t: D) -> D {
        let mut v = c::<D>(0.0);
        for (k, &a) in self.coeffs.iter().enumerate().skip(1).rev() {
            v = v * t + a * k as f64;
        }
        v
    }

    pub fn sddot(&self, t: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(2)
            .map(|(k, a)| a * (k * (k - 1)) as f64 * t.powi(k as i32 - 2))
            .sum()
    }

    /// `c1 = √(δ / c0)`.
    pub fn c1(&self) -> f64 {
        (self.delta / self.c0).sqrt()
    }

    pub fn eval_unchecked(&self, t: f64) -> (f64, f64, f64) {
        (self.s(t), self.sdot(t), self.sddot(t))
    }

    /// `(s, ṡ, s̈)` at `t`; rejects times outside `[0, T]` and violations of
    /// irreversibility or of the speed bound.
    pub fn eval(&self, t: f64) -> Result<(f64, f64, f64)> {
        if !(0.0..=self.t_end).contains(&t) {
            return Err(Error::Range { what: "time", value: t, lo: 0.0, hi: self.t_end });
        }
        let v = self.eval_unchecked(t);
        if v.1 < 0.0 {
            return Err(Error::Validation(format!("irreversibility ṡ ≥ 0 violated at t = {t}: ṡ = {}", v.1)));
        }
        if v.1 * v.1 > self.c0 - self.delta {
            return Err(Error::Validation(format!(
                "speed bound ṡ² ≤ c0 − δ violated at t = {t}: ṡ² = {} > {}",
                v.1 * v.1,
                self.c0 - self.delta
            )));
        }
        Ok(v)
    }

    pub fn sample_times(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.t_end * i as f64 / (n - 1).max(1) as f64).collect()
    }

    pub fn max_speed(&self, n: usize) -> f64 {
        self.sample_times(n).into_iter().map(|t| self.sdot(t)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `r(t) = γ(s(t))`.
pub fn tip_position(path: &CrackPath, law: &GrowthLaw, t: f64) -> Result<[f64; 2]> {
    if !(0.0..=law.t_end).contains(&t) {
        return Err(Error::Range { what: "time", value: t, lo: 0.0, hi: law.t_end });
    }
    Ok(path.frame(law.s(t))?.point)
}

/// Diagnostics of [`validate_scenario`].
#[derive(Clone, Debug, Serialize)]
pub struct ScenarioDiagnostics {
    pub pass: bool,
    pub failures: Vec<String>,
    /// `c0 − δ − max ṡ²`
    pub speed_margin: f64,
    pub max_speed: f64,
    pub min_speed: f64,
    /// Smallest eigenvalue of `A` on the grid minus `c0`.
    pub ellipticity_margin: f64,
    pub min_eigenvalue: f64,
    pub endpoint_distances: [f64; 2],
    pub min_tip_boundary_distance: f64,
    pub arc_length_defect: f64,
    pub simple: bool,
    pub c1: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ValidationOptions {
    pub samples: usize,
    pub ellipticity_grid: usize,
    pub endpoint_tol_rel: f64,
    pub arc_length_tol: f64,
    pub min_tip_distance: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            samples: 1000,
            ellipticity_grid: 100,
            endpoint_tol_rel: 1e-10,
            arc_length_tol: 1e-8,
            min_tip_distance: 0.0,
        }
    }
}

/// Aggregate check of the standing assumptions. Never fails: violations are
/// listed in the returned record.
pub fn validate_scenario(
    domain: &Domain,
    path: &CrackPath,
    law: &GrowthLaw,
    a: &TensorField,
    opts: &ValidationOptions,
) -> ScenarioDiagnostics {
    let mut failures = Vec::new();
    let times = law.sample_times(opts.samples);
    let speeds: Vec<f64> = times.iter().map(|&t| law.sdot(t)).collect();
    let max_speed = speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_speed = speeds.iter().copied().fold(f64::INFINITY, f64::min);
    let max_sq = speeds.iter().map(|v| v * v).fold(0.0, f64::max);
    let speed_margin = law.c0 - law.delta - max_sq;
    if speed_margin < 0.0 {
        failures.push(format!(
            "speed bound ṡ² ≤ c0 − δ violated: max ṡ² = {max_sq} > c0 − δ = {}",
            law.c0 - law.delta
        ));
    }
    if min_speed < 0.0 {
        failures.push(format!("irreversibility ṡ ≥ 0 violated: min ṡ = {min_speed}"));
    }
    let l = path.length();
    let s_vals: Vec<f64> = times.iter().map(|&t| law.s(t)).collect();
    if s_vals.iter().any(|&s| s <= 0.0 || s >= l) {
        failures.push(format!("tip parameter must stay in (0, ℓ = {l})"));
    }
    let (lo, hi) = domain.bbox();
    let grid: Vec<[f64; 2]> = material::box_grid(lo, hi, opts.ellipticity_grid)
        .into_iter()
        .filter(|&p| domain.contains(p))
        .collect();
    let min_eig = material::ellipticity_margin(a, &grid);
    let ell = min_eig - law.c0;
    if ell < 0.0 {
        failures.push(format!("ellipticity: min eigenvalue {min_eig} < c0 = {}", law.c0));
    }
    let diam = domain.diameter();
    let ends = [domain.distance_to_boundary(path.point(0.0)), domain.distance_to_boundary(path.point(l))];
    for (k, d) in ends.iter().enumerate() {
        if *d > opts.endpoint_tol_rel * diam {
            failures.push(format!("crack endpoint {k} is {d:e} away from the boundary"));
        }
    }
    let defect = path.arc_length_defect(opts.samples);
    if defect > opts.arc_length_tol {
        failures.push(format!("arc-length defect {defect:e} exceeds {:e}", opts.arc_length_tol));
    }
    let simple = path.is_simple(opts.samples);
    if !simple {
        failures.push("crack path self-intersects".into());
    }
    let interior_ok = (1..opts.samples - 1).all(|i| {
        let p = path.point(l * i as f64 / (opts.samples - 1) as f64);
        domain.contains(p) && domain.distance_to_boundary(p) > 0.0
    });
    if !interior_ok {
        failures.push("crack path leaves the domain".into());
    }
    let min_tip = s_vals
        .iter()
        .map(|&s| domain.distance_to_boundary(path.point(s.clamp(0.0, l))))
        .fold(f64::INFINITY, f64::min);
    if min_tip < opts.min_tip_distance {
        failures.push(format!("tip comes within {min_tip} of the boundary"));
    }
    ScenarioDiagnostics {
        pass: failures.is_empty(),
        failures,
        speed_margin,
        max_speed,
        min_speed,
        ellipticity_margin: ell,
        min_eigenvalue: min_eig,
        endpoint_distances: ends,
        min_tip_boundary_distance: min_tip,
        arc_length_defect: defect,
        simple,
        c1: law.c1(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn straight_segment_frame() {
        let p = CrackPath::segment([-1.0, 0.0], 0.0, 2.0);
        let f = p.frame(1.0).unwrap();
        assert_eq!(f.point, [0.0, 0.0]);
        assert_eq!(f.tangent, [1.0, 0.0]);
        assert_eq!(f.normal, [0.0, 1.0]);
        assert!(p.frame(2.5).is_err());
    }

    #[test]
    fn circle_arc_frame_matches_hand_derivative() {
        let p = CrackPath::arc([0.0, 0.0], 0.0, 2.0, 1.5 * PI, true);
        let f = p.frame(PI).unwrap();
        assert_abs_diff_eq!(f.point[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.point[1], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.tangent[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.tangent[1], 1.0, epsilon = 1e-14);
        // γ'' = (-sin(σ/2), cos(σ/2)) / 2 at σ = π.
        assert_abs_diff_eq!(f.second[0], -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(f.second[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn spline_fit_of_arc_is_arc_length() {
        let spec = PathSpec::ArcSpline { start: [0.0, 0.0], heading: 0.0, radius: 2.0, length: 1.5 * PI, left: true, knots: 64 };
        let p = CrackPath::from_spec(&spec).unwrap();
        assert!(p.arc_length_defect(1000) <= 1e-6);
        assert_abs_diff_eq!(p.length(), 1.5 * PI, epsilon = 1e-12);
        let q = p.point(PI);
        assert_abs_diff_eq!(q[0], 2.0, epsilon = 1e-7);
        assert_abs_diff_eq!(q[1], 2.0, epsilon = 1e-7);
    }

    #[test]
    fn growth_examples() {
        let l = GrowthLaw::linear(0.3, 0.2, 1.0, 1.0, 0.5);
        let (s, v, a) = l.eval(0.5).unwrap();
        assert_abs_diff_eq!(s, 0.4, epsilon = 1e-15);
        assert_eq!((v, a), (0.2, 0.0));
        let q = GrowthLaw::polynomial(vec![0.3, 0.0, 0.1], 1.0, 1.0, 0.5);
        let (s, v, a) = q.eval(1.0).unwrap();
        assert_abs_diff_eq!(s, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(a, 0.2, epsilon = 1e-15);
        let z = GrowthLaw::polynomial(vec![0.3], 1.0, 1.0, 0.5);
        assert_eq!(z.eval(0.7).unwrap(), (0.3, 0.0, 0.0));
        assert!(l.eval(1.5).is_err());
        let fast = GrowthLaw::linear(0.3, 1.1, 1.0, 1.0, 0.5);
        assert!(matches!(fast.eval(0.2), Err(Error::Validation(_))));
    }

    #[test]
    fn domain_checks() {
        assert!(Domain::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]], vec![]).is_err());
        assert!(Domain::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]], vec![]).is_err());
        let d = Domain::rectangle([0.0, 0.0], [2.0, 1.0]);
        assert!(d.contains([1.0, 0.5]));
        assert!(!d.contains([2.5, 0.5]));
        assert_abs_diff_eq!(d.area(), 2.0);
        assert_abs_diff_eq!(d.distance_to_boundary([1.0, 0.25]), 0.25);
    }
}
