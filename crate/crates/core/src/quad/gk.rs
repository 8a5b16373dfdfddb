//! Adaptive Gauss-Kronrod quadrature in one dimension and a tensor-product
//! adaptive cubature on rectangles. Both keep a deterministic refinement
//! order (largest error first, ties broken by creation index) and sum the
//! final contributions pairwise.

#![allow(clippy::excessive_precision)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::dual::pairwise_sum;
use crate::error::{Error, Result};

const XGK21: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];
const WGK21: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077600525478391,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
const WG10: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

const XGK15: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK15: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG7: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// 15 Kronrod nodes on [-1, 1] with Kronrod and embedded Gauss weights
/// (Gauss weight 0 on the non-Gauss nodes).
fn rule15() -> [(f64, f64, f64); 15] {
    let mut r = [(0.0, 0.0, 0.0); 15];
    let mut k = 0;
    for i in 0..7 {
        let wg = if i % 2 == 1 { WG7[i / 2] } else { 0.0 };
        r[k] = (-XGK15[i], WGK15[i], wg);
        r[k + 1] = (XGK15[i], WGK15[i], wg);
        k += 2;
    }
    r[14] = (0.0, WGK15[7], WG7[3]);
    r
}

/// One Gauss-Kronrod 21-point panel: `(kronrod, |kronrod - gauss|)`.
pub fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK21[10];
    let mut rg = 0.0;
    for i in 0..10 {
        let dx = h * XGK21[i];
        let s = f(c - dx) + f(c + dx);
        rk += WGK21[i] * s;
        if i % 2 == 1 {
            rg += WG10[i / 2] * s;
        }
    }
    (rk * h, ((rk - rg) * h).abs())
}

#[derive(Clone, Copy, Debug)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions { abs_tol: 1e-12, rel_tol: 1e-12, max_panels: 4000 }
    }
}

impl QuadOptions {
    pub fn abs(tol: f64) -> Self {
        QuadOptions { abs_tol: tol, rel_tol: 0.0, ..Default::default() }
    }
}

struct Panel {
    err: f64,
    id: usize,
    a: f64,
    b: f64,
    val: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err).then_with(|| o.id.cmp(&self.id))
    }
}

/// Adaptive integration of `f` over `[a, b]` with interior breakpoints.
/// Never fails; `converged` reports whether the tolerance was met.
pub fn integrate_points<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: QuadOptions,
) -> QuadResult {
    let mut pts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a.min(b) && x < a.max(b)).collect();
    inner.sort_by(f64::total_cmp);
    if b < a {
        inner.reverse();
    }
    pts.extend(inner);
    pts.push(b);
    let mut heap = BinaryHeap::new();
    let mut id = 0;
    let mut evals = 0;
    for w in pts.windows(2) {
        let (v, e) = gk21(&mut f, w[0], w[1]);
        evals += 21;
        heap.push(Panel { err: e, id, a: w[0], b: w[1], val: v });
        id += 1;
    }
    let total = |h: &BinaryHeap<Panel>| -> (f64, f64) {
        let mut p: Vec<&Panel> = h.iter().collect();
        p.sort_by_key(|q| q.id);
        let vals: Vec<f64> = p.iter().map(|q| q.val).collect();
        let errs: Vec<f64> = p.iter().map(|q| q.err).collect();
        (pairwise_sum(&vals), pairwise_sum(&errs))
    };
    let mut sum_v: f64 = heap.iter().map(|p| p.val).sum();
    let mut sum_e: f64 = heap.iter().map(|p| p.err).sum();
    loop {
        let tol = opts.abs_tol.max(opts.rel_tol * sum_v.abs());
        if sum_e <= tol || heap.len() >= opts.max_panels {
            break;
        }
        let worst = heap.pop().expect("non-empty");
        let m = 0.5 * (worst.a + worst.b);
        if m == worst.a || m == worst.b {
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk21(&mut f, worst.a, m);
        let (v2, e2) = gk21(&mut f, m, worst.b);
        evals += 42;
        sum_v += v1 + v2 - worst.val;
        sum_e += e1 + e2 - worst.err;
        heap.push(Panel { err: e1, id, a: worst.a, b: m, val: v1 });
        heap.push(Panel { err: e2, id: id + 1, a: m, b: worst.b, val: v2 });
        id += 2;
    }
    let (value, error) = total(&heap);
    let tol = opts.abs_tol.max(opts.rel_tol * value.abs());
    QuadResult { value, error, evaluations: evals, converged: error <= tol }
}

pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> QuadResult {
    integrate_points(f, a, b, &[], opts)
}

/// As [`integrate`], but budget exhaustion is an error.
pub fn integrate_checked<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64> {
    let r = integrate(f, a, b, opts);
    if r.converged {
        Ok(r.value)
    } else {
        Err(Error::Quadrature {
            estimate: r.value,
            error: r.error,
            tol: opts.abs_tol.max(opts.rel_tol * r.value.abs()),
        })
    }
}

/// Fixed 10-point Gauss-Legendre rule on `[a, b]`.
pub fn gauss10<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for i in 0..5 {
        let dx = h * XGK21[2 * i + 1];
        s += WG10[i] * (f(c - dx) + f(c + dx));
    }
    s * h
}

/// Nodes and weights of the 10-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss10_rule() -> [(f64, f64); 10] {
    let mut out = [(0.0, 0.0); 10];
    for i in 0..5 {
        let x = XGK21[2 * i + 1];
        out[2 * i] = (-x, WG10[i]);
        out[2 * i + 1] = (x, WG10[i]);
    }
    out
}

/// Axis-aligned cell `[u0, u1] x [v0, v1]` in the parameter square.
#[derive(Clone, Copy, Debug)]
pub struct Cell {
    pub u: [f64; 2],
    pub v: [f64; 2],
}

struct CellEntry {
    err: f64,
    id: usize,
    cell: Cell,
    val: f64,
}
impl PartialEq for CellEntry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for CellEntry {}
impl PartialOrd for CellEntry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for CellEntry {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err).then_with(|| o.id.cmp(&self.id))
    }
}

/// Tensor Kronrod-15 / Gauss-7 rule on one cell: `(value, error)`.
pub fn cell_rule<F: Fn(f64, f64) -> f64>(f: &F, c: &Cell) -> (f64, f64) {
    let r = rule15();
    let cu = 0.5 * (c.u[0] + c.u[1]);
    let hu = 0.5 * (c.u[1] - c.u[0]);
    let cv = 0.5 * (c.v[0] + c.v[1]);
    let hv = 0.5 * (c.v[1] - c.v[0]);
    let mut k = 0.0;
    let mut g = 0.0;
    for &(xu, wku, wgu) in &r {
        let u = cu + hu * xu;
        let mut rk = 0.0;
        let mut rg = 0.0;
        for &(xv, wkv, wgv) in &r {
            let val = f(u, cv + hv * xv);
            rk += wkv * val;
            rg += wgv * val;
        }
        k += wku * rk;
        g += wgu * rg;
    }
    let area = hu * hv;
    (k * area, ((k - g) * area).abs())
}

#[derive(Clone, Copy, Debug)]
pub struct CubatureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_cells: usize,
}

impl Default for CubatureOptions {
    fn default() -> Self {
        CubatureOptions { abs_tol: 1e-10, rel_tol: 1e-10, max_cells: 20_000 }
    }
}

/// Adaptive cubature of `f(u, v)` over a union of initial cells, refining the
/// worst cell by bisection in both directions.
pub fn cubature<F: Fn(f64, f64) -> f64 + Sync>(f: &F, initial: &[Cell], opts: CubatureOptions) -> QuadResult {
    let mut heap = BinaryHeap::new();
    let mut id = 0;
    let mut evals = 0;
    let first: Vec<(f64, f64)> = {
        use rayon::prelude::*;
        initial.par_iter().map(|c| cell_rule(f, c)).collect()
    };
    for (c, (v, e)) in initial.iter().zip(first) {
        heap.push(CellEntry { err: e, id, cell: *c, val: v });
        id += 1;
        evals += 225;
    }
    let mut sum_v: f64 = heap.iter().map(|p| p.val).sum();
    let mut sum_e: f64 = heap.iter().map(|p| p.err).sum();
    loop {
        let tol = opts.abs_tol.max(opts.rel_tol * sum_v.abs());
        if sum_e <= tol || heap.len() + 3 > opts.max_cells {
            break;
        }
        let w = heap.pop().expect("non-empty");
        let c = w.cell;
        let um = 0.5 * (c.u[0] + c.u[1]);
        let vm = 0.5 * (c.v[0] + c.v[1]);
        let kids = [
            Cell { u: [c.u[0], um], v: [c.v[0], vm] },
            Cell { u: [um, c.u[1]], v: [c.v[0], vm] },
            Cell { u: [c.u[0], um], v: [vm, c.v[1]] },
            Cell { u: [um, c.u[1]], v: [vm, c.v[1]] },
        ];
        let res: Vec<(f64, f64)> = {
            use rayon::prelude::*;
            kids.par_iter().map(|k| cell_rule(f, k)).collect()
        };
        sum_v -= w.val;
        sum_e -= w.err;
        for (k, (v, e)) in kids.iter().zip(res) {
            sum_v += v;
            sum_e += e;
            heap.push(CellEntry { err: e, id, cell: *k, val: v });
            id += 1;
            evals += 225;
        }
    }
    let mut all: Vec<CellEntry> = heap.into_vec();
    all.sort_by_key(|e| e.id);
    let vals: Vec<f64> = all.iter().map(|e| e.val).collect();
    let errs: Vec<f64> = all.iter().map(|e| e.err).collect();
    let value = pairwise_sum(&vals);
    let error = pairwise_sum(&errs);
    let tol = opts.abs_tol.max(opts.rel_tol * value.abs());
    QuadResult { value, error, evaluations: evals, converged: error <= tol }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact_on_one_panel() {
        let (v, _) = gk21(&mut |x: f64| x.powi(20), 0.0, 1.0);
        assert!((v - 1.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn endpoint_singularity() {
        let r = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, QuadOptions::abs(1e-10));
        assert!(r.converged);
        assert!((r.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn breakpoints_resolve_kinks() {
        let r = integrate_points(|x: f64| (x - 0.3).abs(), 0.0, 1.0, &[0.3], QuadOptions::default());
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-14);
    }

    #[test]
    fn cubature_of_smooth_function() {
        let f = |u: f64, v: f64| (u * v).exp();
        let r = cubature(&f, &[Cell { u: [0.0, 1.0], v: [0.0, 1.0] }], CubatureOptions::default());
        // ∫∫ e^{uv} = Σ 1/(k!·(k+1)) ... evaluated by a 1D oracle.
        let oracle = integrate(|u: f64| if u == 0.0 { 1.0 } else { (u.exp() - 1.0) / u }, 0.0, 1.0, QuadOptions::default());
        assert!((r.value - oracle.value).abs() < 1e-12);
    }
}
