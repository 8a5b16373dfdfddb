//! Quadrature on slit domains and boundary-layer integrals near the crack.
//!
//! Area integrals with a tip singularity are split along the crack line, fanned
//! into triangles with the tip as apex and mapped to the unit square by a
//! Duffy collapse with the graded substitution `λ = μ²`. A `r^{-1}` integrand
//! becomes bounded, an `r^{-1/2}` gradient becomes polynomial in `μ`.

pub mod gk;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dual::{self, d3_parts, d3_vars, radial_cutoff_vec, Real, V2};
use crate::error::{Error, Result};
use crate::fields::s_value;
use crate::geom::GrowthLaw;
use gk::{cubature, integrate_points, Cell, CubatureOptions, QuadOptions, QuadResult};

/// Crack as the ray behind `tip` in direction `-dir`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slit {
    pub tip: [f64; 2],
    pub dir: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    /// Convex polygon, counter-clockwise.
    Polygon(Vec<[f64; 2]>),
    Disk { center: [f64; 2], radius: f64 },
}

/// Integration plan over a region cut by an optional slit.
#[derive(Clone, Debug)]
pub struct SlitQuadrature {
    pub region: Region,
    pub slit: Option<Slit>,
    pub opts: CubatureOptions,
    /// Number of dyadic `λ` levels in the initial Duffy grading.
    pub levels: usize,
}

/// Triangle `(apex, p, q)`; the apex is where the grading concentrates.
pub type Triangle = [[f64; 2]; 3];

fn tri_area(t: &Triangle) -> f64 {
    0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[1][1] - t[0][1]) * (t[2][0] - t[0][0]))
}

/// Part of a convex polygon on the side `(x - p)·n ≥ 0`.
pub fn clip_halfplane(poly: &[[f64; 2]], p: [f64; 2], n: [f64; 2]) -> Vec<[f64; 2]> {
    let side = |x: [f64; 2]| (x[0] - p[0]) * n[0] + (x[1] - p[1]) * n[1];
    let mut out = Vec::new();
    let m = poly.len();
    for i in 0..m {
        let a = poly[i];
        let b = poly[(i + 1) % m];
        let (sa, sb) = (side(a), side(b));
        if sa >= 0.0 {
            out.push(a);
        }
        if (sa > 0.0 && sb < 0.0) || (sa < 0.0 && sb > 0.0) {
            let t = sa / (sa - sb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out.dedup_by(|a, b| dual::norm(dual::sub(*a, *b)) < 1e-15);
    if out.len() > 1 && dual::norm(dual::sub(out[0], out[out.len() - 1])) < 1e-15 {
        out.pop();
    }
    out
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let m = poly.len();
    0.5 * (0..m)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % m];
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
}

/// Fan a convex polygon from `apex` (which must lie in its closure) or, when
/// `apex` is outside, from the centroid.
fn fan(poly: &[[f64; 2]], apex: Option<[f64; 2]>) -> Vec<Triangle> {
    if poly.len() < 3 || polygon_area(poly) <= 0.0 {
        return Vec::new();
    }
    let m = poly.len();
    let inside = |x: [f64; 2]| {
        (0..m).all(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % m];
            (b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0]) >= -1e-14
        })
    };
    let centre = {
        let s = poly.iter().fold([0.0, 0.0], |acc, v| dual::add(acc, *v));
        dual::scale(1.0 / m as f64, s)
    };
    let apex = match apex {
        Some(a) if inside(a) => a,
        _ => centre,
    };
    let mut out = Vec::new();
    for i in 0..m {
        let t = [apex, poly[i], poly[(i + 1) % m]];
        if tri_area(&t) > 1e-15 * polygon_area(poly) {
            out.push(t);
        }
    }
    out
}

impl SlitQuadrature {
    pub fn new(region: Region, slit: Option<Slit>) -> SlitQuadrature {
        SlitQuadrature { region, slit, opts: CubatureOptions::default(), levels: 12 }
    }

    pub fn with_tol(mut self, abs_tol: f64, rel_tol: f64) -> SlitQuadrature {
        self.opts.abs_tol = abs_tol;
        self.opts.rel_tol = rel_tol;
        self
    }

    /// Triangles of the Duffy fan. Empty for a disk region.
    pub fn triangles(&self) -> Vec<Triangle> {
        let Region::Polygon(poly) = &self.region else {
            return Vec::new();
        };
        match self.slit {
            None => fan(poly, None),
            Some(s) => {
                let n = dual::perp(s.dir);
                let up = clip_halfplane(poly, s.tip, n);
                let down = clip_halfplane(poly, s.tip, [-n[0], -n[1]]);
                let mut t = fan(&up, Some(s.tip));
                t.extend(fan(&down, Some(s.tip)));
                t
            }
        }
    }

    /// Total area covered by the cells (should equal the region area).
    pub fn cell_area(&self) -> f64 {
        match &self.region {
            Region::Polygon(_) => dual::pairwise_sum(&self.triangles().iter().map(tri_area).collect::<Vec<_>>()),
            Region::Disk { radius, .. } => std::f64::consts::PI * radius * radius,
        }
    }

    fn initial_cells(&self, count: usize) -> Vec<(usize, Cell)> {
        let mut mus = vec![1.0];
        for k in 1..=self.levels {
            mus.push(0.5f64.powf(0.5 * k as f64));
        }
        mus.push(0.0);
        mus.reverse();
        let mut out = Vec::new();
        for id in 0..count {
            for w in mus.windows(2) {
                out.push((id, Cell { u: [w[0], w[1]], v: [0.0, 1.0] }));
            }
        }
        out
    }

    /// Adaptive integral of `f`. Nodes are interior Gauss points, so none
    /// lies on the crack line.
    pub fn integrate<F: Fn([f64; 2]) -> f64 + Sync>(&self, f: F) -> QuadResult {
        match &self.region {
            Region::Polygon(_) => {
                let tris = self.triangles();
                // Stack all triangles side by side along v: cell v ∈ [k, k+1] is triangle k.
                let g = |mu: f64, v: f64| {
                    let k = (v.floor() as usize).min(tris.len() - 1);
                    let tau = v - k as f64;
                    let t = &tris[k];
                    let lam = mu * mu;
                    let e = [t[1][0] + tau * (t[2][0] - t[1][0]), t[1][1] + tau * (t[2][1] - t[1][1])];
                    let x = [t[0][0] + lam * (e[0] - t[0][0]), t[0][1] + lam * (e[1] - t[0][1])];
                    4.0 * tri_area(t) * mu * mu * mu * f(x)
                };
                let cells: Vec<Cell> = self
                    .initial_cells(tris.len())
                    .into_iter()
                    .map(|(k, c)| Cell { u: c.u, v: [k as f64, k as f64 + 1.0] })
                    .collect();
                if cells.is_empty() {
                    return QuadResult { value: 0.0, error: 0.0, evaluations: 0, converged: true };
                }
                cubature(&g, &cells, self.opts)
            }
            Region::Disk { center, radius } => {
                let th0 = self.slit.map(|s| s.dir[1].atan2(s.dir[0])).unwrap_or(0.0);
                let (c, r) = (*center, *radius);
                let g = |rho: f64, th: f64| {
                    let rr = rho * rho * r;
                    let a = th + th0;
                    2.0 * r * rr * rho * f([c[0] + rr * a.cos(), c[1] + rr * a.sin()])
                };
                let pi = std::f64::consts::PI;
                let ths = [-pi, -0.5 * pi, 0.0, 0.5 * pi, pi];
                let cells: Vec<Cell> = ths
                    .windows(2)
                    .map(|w| Cell { u: [0.0, 1.0], v: [w[0], w[1]] })
                    .collect();
                cubature(&g, &cells, self.opts)
            }
        }
    }
}

/// Integral over a slit region; budget exhaustion is an error.
pub fn integrate_cracked<F: Fn([f64; 2]) -> f64 + Sync>(f: F, q: &SlitQuadrature) -> Result<QuadResult> {
    let r = q.integrate(f);
    if r.converged {
        Ok(r)
    } else {
        Err(Error::Quadrature {
            estimate: r.value,
            error: r.error,
            tol: q.opts.abs_tol.max(q.opts.rel_tol * r.value.abs()),
        })
    }
}

fn check_interval(a: f64, b: f64, eps: f64) -> Result<()> {
    if a >= 0.0 || b <= 0.0 {
        return Err(Error::Domain(format!("need a < 0 < b, got a = {a}, b = {b}")));
    }
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Domain(format!("layer width must be positive, got {eps}")));
    }
    Ok(())
}

fn inner_opts() -> QuadOptions {
    QuadOptions { abs_tol: 1e-13, rel_tol: 1e-12, max_panels: 2000 }
}

fn outer_opts() -> QuadOptions {
    QuadOptions { abs_tol: 1e-11, rel_tol: 1e-11, max_panels: 400 }
}

/// `(1/ε) ∫₀^ε ∫_a^b g(x1, x2) x2 / (x1² + x2²) dx1 dx2`, computed as
/// `∫₀¹ ∫_a^b g(x1, εu) εu / (x1² + ε²u²) dx1 du`.
pub fn fondlem_value<G: Fn(f64, f64) -> f64>(g: G, a: f64, b: f64, eps: f64) -> Result<QuadResult> {
    check_interval(a, b, eps)?;
    let mut err = 0.0;
    let mut ok = true;
    let r = gk::integrate(
        |u| {
            let h = eps * u;
            if h == 0.0 {
                return 0.0;
            }
            let inner = integrate_points(|x1| g(x1, h) * h / (x1 * x1 + h * h), a, b, &[0.0], inner_opts());
            err += inner.error;
            ok &= inner.converged;
            inner.value
        },
        0.0,
        1.0,
        outer_opts(),
    );
    Ok(QuadResult { value: r.value, error: r.error + err.min(1.0), evaluations: r.evaluations, converged: r.converged && ok })
}

/// `θ(ε) = |π − ∫₀¹ [arctan(b/(εu)) − arctan(a/(εu))] du|`.
pub fn fondlem_theta(a: f64, b: f64, eps: f64) -> Result<f64> {
    check_interval(a, b, eps)?;
    let r = gk::integrate(
        |u| {
            if u == 0.0 {
                std::f64::consts::PI
            } else {
                (b / (eps * u)).atan() - (a / (eps * u)).atan()
            }
        },
        0.0,
        1.0,
        QuadOptions { abs_tol: 1e-15, rel_tol: 1e-15, max_panels: 400 },
    );
    Ok((std::f64::consts::PI - r.value).abs())
}

/// Right-hand side of the layer estimate:
/// `‖g‖∞ (2 ε^{1/2} |b − a| + θ(ε)) + π ω(ε^{1/4})`.
pub fn fondlem_bound<W: Fn(f64) -> f64>(g_sup: f64, omega: W, a: f64, b: f64, eps: f64) -> Result<f64> {
    let theta = fondlem_theta(a, b, eps)?;
    Ok(g_sup * (2.0 * eps.sqrt() * (b - a).abs() + theta) + std::f64::consts::PI * omega(eps.powf(0.25)))
}

/// One row of a layer-integral convergence table.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FondlemRow {
    pub eps: f64,
    pub value: f64,
    pub limit: f64,
    pub deviation: f64,
    pub bound: f64,
    pub theta: f64,
    pub quad_error: f64,
    pub within_bound: bool,
}

pub fn fondlem_table<G, W>(g: G, g_sup: f64, omega: W, a: f64, b: f64, eps_seq: &[f64]) -> Result<Vec<FondlemRow>>
where
    G: Fn(f64, f64) -> f64,
    W: Fn(f64) -> f64,
{
    let limit = std::f64::consts::PI * g(0.0, 0.0);
    eps_seq
        .iter()
        .map(|&eps| {
            let v = fondlem_value(&g, a, b, eps)?;
            let bound = fondlem_bound(g_sup, &omega, a, b, eps)?;
            let theta = fondlem_theta(a, b, eps)?;
            let deviation = (v.value - limit).abs();
            Ok(FondlemRow {
                eps,
                value: v.value,
                limit,
                deviation,
                bound,
                theta,
                quad_error: v.error,
                within_bound: deviation <= bound,
            })
        })
        .collect()
}

/// Least-squares fit of `value(ε) = L + c1 ε^{1/2} + c2 ε`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Richardson {
    pub limit: f64,
    pub c_half: f64,
    pub c_one: f64,
    pub residual: f64,
}

pub fn richardson(eps: &[f64], values: &[f64]) -> Result<Richardson> {
    if eps.len() != values.len() || eps.len() < 3 {
        return Err(Error::Fit("need at least three (ε, value) pairs".into()));
    }
    let n = eps.len();
    let a = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => eps[i].sqrt(),
        _ => eps[i],
    });
    let y = DVector::from_column_slice(values);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-14 * smax {
        return Err(Error::Fit("ε sequence does not determine the extrapolation model".into()));
    }
    let c = svd.solve(&y, 1e-14 * smax).map_err(|e| Error::Fit(e.to_string()))?;
    let residual = (&a * &c - &y).norm();
    Ok(Richardson { limit: c[0], c_half: c[1], c_one: c[2], residual })
}

/// One side of the ε-neighbourhood of a segment: a flat strip over the
/// segment plus the two quarter-disks at its ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TubeRegion {
    pub start: [f64; 2],
    pub end: [f64; 2],
    /// `+1` for the side of `+n`, `n = (end − start)⊥ / |end − start|`.
    pub side: f64,
    pub eps: f64,
}

/// Contributions of a tube integral.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TubeParts {
    pub strip: f64,
    pub start_cap: f64,
    pub end_cap: f64,
    pub error: f64,
}

impl TubeParts {
    pub fn total(&self) -> f64 {
        self.strip + self.start_cap + self.end_cap
    }
}

impl TubeRegion {
    pub fn length(&self) -> f64 {
        dual::norm(dual::sub(self.end, self.start))
    }

    fn frame(&self) -> ([f64; 2], [f64; 2]) {
        let l = self.length();
        let t = dual::scale(1.0 / l, dual::sub(self.end, self.start));
        (t, dual::scale(self.side.signum(), dual::perp(t)))
    }

    /// `Lε + πε²/2`.
    pub fn area(&self) -> f64 {
        self.length() * self.eps + 0.5 * std::f64::consts::PI * self.eps * self.eps
    }

    /// Area by the same quadrature that [`TubeRegion::integrate`] uses.
    pub fn area_numeric(&self) -> f64 {
        self.eps * self.integrate(|_| 1.0).total()
    }

    /// `∫_{tube} f |∇φ_ε|`, with `|∇φ_ε| = 1/ε` inside the tube.
    pub fn integrate<F: Fn([f64; 2]) -> f64 + Sync>(&self, f: F) -> TubeParts {
        let (t, n) = self.frame();
        let (l, eps) = (self.length(), self.eps);
        let strip = gk::integrate(
            |u| {
                let h = eps * u;
                gk::integrate(
                    |s| f(dual::add(self.start, dual::add(dual::scale(s, t), dual::scale(h, n)))),
                    0.0,
                    l,
                    inner_opts(),
                )
                .value
            },
            0.0,
            1.0,
            outer_opts(),
        );
        let opts = CubatureOptions { abs_tol: 1e-13, rel_tol: 1e-11, max_cells: 4000 };
        let cap = |c: [f64; 2], away: [f64; 2]| {
            // Quarter disk between directions `away` and `n`; (1/ε) ∫ ρ dρ dθ = ε ∫ v dv dθ.
            let g = |v: f64, th: f64| {
                let d = dual::add(dual::scale(th.cos(), away), dual::scale(th.sin(), n));
                eps * v * f(dual::add(c, dual::scale(eps * v, d)))
            };
            cubature(&g, &[Cell { u: [0.0, 1.0], v: [0.0, 0.5 * std::f64::consts::PI] }], opts)
        };
        let a = cap(self.start, [-t[0], -t[1]]);
        let b = cap(self.end, t);
        TubeParts { strip: strip.value, start_cap: a.value, end_cap: b.value, error: strip.error + a.error + b.error }
    }
}

/// Convergence of a tube integral towards a known trace value.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TubeRow {
    pub eps: f64,
    pub value: f64,
    pub trace: f64,
    pub error: f64,
}

/// Tube values over `eps_seq` and the fitted order `p` in `|value − trace| ≈ C ε^p`.
pub fn tube_convergence<F: Fn([f64; 2]) -> f64 + Sync>(
    f: F,
    start: [f64; 2],
    end: [f64; 2],
    side: f64,
    eps_seq: &[f64],
    trace: f64,
) -> (Vec<TubeRow>, f64) {
    let rows: Vec<TubeRow> = eps_seq
        .iter()
        .map(|&eps| {
            let v = TubeRegion { start, end, side, eps }.integrate(&f).total();
            TubeRow { eps, value: v, trace, error: (v - trace).abs() }
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.error > 0.0)
        .map(|r| (r.eps.ln(), r.error.ln()))
        .collect();
    (rows, loglog_slope(&pts))
}

/// Least-squares slope of `y` against `x`.
pub fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Straight-crack setting of the tip-flux integral: the crack grows along the
/// positive `x1` axis from the origin, `Γ(t) \ Γ(0) = (0, s(t) − s(0)] × {0}`.
#[derive(Clone, Debug)]
pub struct TipFluxSetup {
    pub law: GrowthLaw,
    /// Time of the integrand.
    pub t: f64,
    /// Time fixing the tube `Γ(t̄) \ Γ(0)`.
    pub t_bar: f64,
    pub k: f64,
    /// Radii of the cutoff `ζ`, radial in the moving coordinates.
    pub zeta: (f64, f64),
}

/// `I_ε = I⁺_ε + I⁻_ε` split by region.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TipFlux {
    pub eps: f64,
    pub plus: f64,
    pub minus: f64,
    pub strip_plus: f64,
    pub strip_minus: f64,
    pub caps: f64,
}

impl TipFlux {
    pub fn total(&self) -> f64 {
        self.plus + self.minus
    }
}

impl TipFluxSetup {
    fn alpha(&self) -> f64 {
        (1.0 - self.law.sdot(self.t).powi(2)).sqrt()
    }

    /// `(S̄, ∇S̄, ∂t S̄, ζ)` at `x` with `S̄(t, x) = S((x1 − (s(t) − s(0)))/α(t), x2)`.
    fn sbar(&self, x: [f64; 2]) -> (f64, [f64; 2], f64, f64) {
        let (tt, xx) = d3_vars(self.t, x);
        let s0 = self.law.s(0.0);
        let y = moving_coords(&self.law, s0, tt, xx);
        let (v, g) = d3_parts(s_value(y));
        let z = radial_cutoff_vec(dual::re2(y), self.zeta.0, self.zeta.1);
        (v, [g[1], g[2]], g[0], z)
    }

    fn density(&self, x: [f64; 2], grad_phi_eps: [f64; 2]) -> f64 {
        let (_, g, sd, z) = self.sbar(x);
        self.k * self.k * z * z * (g[0] * grad_phi_eps[0] + g[1] * grad_phi_eps[1]) * sd
    }

    /// `I_ε(t)` with the three-region form of `∇φ_ε` (times `ε`).
    pub fn flux(&self, eps: f64) -> TipFlux {
        let l = self.law.s(self.t_bar) - self.law.s(0.0);
        let tip = self.law.s(self.t) - self.law.s(0.0);
        let strip = |side: f64| {
            gk::integrate(
                |u| {
                    let h = side * eps * u;
                    integrate_points(|x1| self.density([x1, h], [0.0, side]), 0.0, l, &[tip], inner_opts()).value
                },
                0.0,
                1.0,
                outer_opts(),
            )
            .value
        };
        let sp = strip(1.0);
        let sm = strip(-1.0);
        let opts = CubatureOptions { abs_tol: 1e-13, rel_tol: 1e-10, max_cells: 2000 };
        let cap = |c: [f64; 2], th: [f64; 2]| {
            let g = |v: f64, a: f64| {
                let d = [a.cos(), a.sin()];
                eps * v * self.density(dual::add(c, dual::scale(eps * v, d)), d)
            };
            cubature(&g, &[Cell { u: [0.0, 1.0], v: th }], opts).value
        };
        let pi = std::f64::consts::PI;
        let caps_plus = cap([0.0, 0.0], [0.5 * pi, pi]) + cap([l, 0.0], [0.0, 0.5 * pi]);
        let caps_minus = cap([0.0, 0.0], [-pi, -0.5 * pi]) + cap([l, 0.0], [-0.5 * pi, 0.0]);
        TipFlux {
            eps,
            plus: sp + caps_plus,
            minus: sm + caps_minus,
            strip_plus: sp,
            strip_minus: sm,
            caps: caps_plus + caps_minus,
        }
    }

    /// `(1/ε) ∫₀^ε ∫_{a_t}^{b_t} y1 ζ² ∂1S ∂2S dy` in the moving coordinates:
    /// the term that carries `s̈` and vanishes in the limit.
    pub fn weighted_term(&self, eps: f64) -> f64 {
        let a = self.alpha();
        let s0 = self.law.s(0.0);
        let tip = self.law.s(self.t) - s0;
        let l = self.law.s(self.t_bar) - s0;
        let (lo, hi) = (-tip / a, (l - tip) / a);
        let (r_in, r_out) = self.zeta;
        gk::integrate(
            |u| {
                let h = eps * u;
                integrate_points(
                    |y1| {
                        let z = radial_cutoff_vec([y1, h], r_in, r_out);
                        -y1 * z * z * h / (8.0 * (y1 * y1 + h * h))
                    },
                    lo,
                    hi,
                    &[0.0],
                    inner_opts(),
                )
                .value
            },
            0.0,
            1.0,
            outer_opts(),
        )
        .value
    }
}

/// `((x1 − (s(t) − s0)) / √(1 − ṡ(t)²), x2)`.
pub fn moving_coords<D: Real>(law: &GrowthLaw, s0: f64, t: D, x: V2<D>) -> V2<D> {
    let v = law.sdot(t);
    let alpha = (D::from(1.0) - v * v).sqrt();
    [(x[0] - law.s(t) + s0) / alpha, x[1]]
}

/// Tip-flux values over an ε-sequence with Richardson limits of the total and
/// of both half-plane parts.
#[derive(Clone, Debug, Serialize)]
pub struct TipFluxStudy {
    pub rows: Vec<TipFlux>,
    pub total: Richardson,
    pub plus: Richardson,
    pub minus: Richardson,
    /// `(π/4) k² ṡ(t)`
    pub predicted: f64,
}

pub fn tip_flux(setup: &TipFluxSetup, eps_seq: &[f64]) -> Result<TipFluxStudy> {
    use rayon::prelude::*;
    let rows: Vec<TipFlux> = eps_seq.par_iter().map(|&e| setup.flux(e)).collect();
    let tot: Vec<f64> = rows.iter().map(|r| r.total()).collect();
    let plus: Vec<f64> = rows.iter().map(|r| r.plus).collect();
    let minus: Vec<f64> = rows.iter().map(|r| r.minus).collect();
    Ok(TipFluxStudy {
        total: richardson(eps_seq, &tot)?,
        plus: richardson(eps_seq, &plus)?,
        minus: richardson(eps_seq, &minus)?,
        predicted: 0.25 * std::f64::consts::PI * setup.k * setup.k * setup.law.sdot(setup.t),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_square_area() {
        let q = SlitQuadrature::new(Region::Polygon(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), None);
        let r = integrate_cracked(|_| 1.0, &q).unwrap();
        assert!((r.value - 1.0).abs() < 1e-13);
    }

    #[test]
    fn clip_keeps_area() {
        let sq = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let a = clip_halfplane(&sq, [0.3, 0.0], [1.0, 0.0]);
        let b = clip_halfplane(&sq, [0.3, 0.0], [-1.0, 0.0]);
        assert!((polygon_area(&a) + polygon_area(&b) - 1.0).abs() < 1e-15);
        assert!((polygon_area(&a) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn theta_closed_form() {
        for eps in [1e-1f64, 1e-2, 1e-3] {
            let exact = 2.0 * eps.atan() - (1.0 + eps * eps).ln() / eps;
            assert!((fondlem_theta(-1.0, 1.0, eps).unwrap() - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn fondlem_domain_errors() {
        assert!(fondlem_value(|_, _| 1.0, 0.0, 1.0, 0.1).is_err());
        assert!(fondlem_value(|_, _| 1.0, -1.0, 0.0, 0.1).is_err());
        assert!(fondlem_value(|_, _| 1.0, -1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn richardson_recovers_model() {
        let eps = [1e-1, 1e-2, 1e-3, 1e-4];
        let v: Vec<f64> = eps.iter().map(|e: &f64| PI + 0.3 * e.sqrt() - 2.0 * e).collect();
        let r = richardson(&eps, &v).unwrap();
        assert!((r.limit - PI).abs() < 1e-12);
        assert!((r.c_half - 0.3).abs() < 1e-10);
    }

    #[test]
    fn tube_area_matches_formula() {
        let t = TubeRegion { start: [0.0, 0.0], end: [1.0, 0.0], side: 1.0, eps: 0.1 };
        assert!((t.area_numeric() - t.area()).abs() < 1e-10);
    }
}
