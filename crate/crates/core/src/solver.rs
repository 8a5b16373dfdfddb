//! Piecewise-linear finite elements for
//! `v̈ − div(A⁽⁴⁾∇v) + p·∇v − 2q·∇v̇ = g` on a rectangle cut by a straight
//! slit along `y2 = 0`, with average-acceleration Newmark stepping.
//!
//! The mesh is a graded quadtree. Cells with a finer neighbour are fanned
//! from their centre through the hanging midpoints, which keeps the
//! triangulation conforming without constraint equations.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use rayon::prelude::*;
use serde::Serialize;

use crate::charts::{Chart, Pipeline, Stage, Windows};
use crate::fields::{self, Mms};
use crate::dual;
use crate::error::{Error, Result};
use crate::geom::{CrackPath, Domain};

const LMAX: u32 = 30;
/// Cell size grows linearly with distance from the tip at this rate, so
/// consecutive layers shrink by a factor of about 0.7 toward the tip.
const GRADING: f64 = 0.43;

/// Geometry and resolution of a slit mesh.
#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct MeshSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    /// Slit `[lo[0], tip] × {0}`; `None` for an uncut rectangle.
    pub slit_tip: Option<f64>,
    pub h: f64,
    pub h_tip: f64,
    /// Dirichlet flags for the bottom, right, top and left sides.
    #[serde(default)]
    pub dirichlet: [bool; 4],
}

/// Triangulation with duplicated lip vertices.
#[derive(Clone, Debug)]
pub struct SlitMesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// `true` for triangles above the slit line.
    pub upper: Vec<bool>,
    /// `(upper, lower)` vertex pairs along the slit.
    pub lips: Vec<(usize, usize)>,
    pub tip: Option<usize>,
    pub dirichlet: Vec<bool>,
    pub min_angle_deg: f64,
    pub h_min: f64,
    locator: Locator,
}

#[derive(Clone, Debug)]
struct Locator {
    lo: [f64; 2],
    cell: [f64; 2],
    n: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

struct Lattice {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Lattice {
    fn coord(edges: &[f64], k: u64) -> f64 {
        let c = (k >> LMAX) as usize;
        if c + 1 >= edges.len() {
            return edges[edges.len() - 1];
        }
        let frac = (k & ((1u64 << LMAX) - 1)) as f64 / (1u64 << LMAX) as f64;
        edges[c] + frac * (edges[c + 1] - edges[c])
    }

    fn point(&self, k: (u64, u64)) -> [f64; 2] {
        [Self::coord(&self.xs, k.0), Self::coord(&self.ys, k.1)]
    }
}

/// Uniform partition of `[a, b]` into pieces no longer than `h`.
fn split(a: f64, b: f64, h: f64) -> Vec<f64> {
    let n = ((b - a) / h).ceil().max(1.0) as usize;
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

fn join(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    a.pop();
    a.extend(b);
    a
}

type CellKey = (u32, u64, u64);

fn size_of(l: u32) -> u64 {
    1u64 << (LMAX - l)
}

impl SlitMesh {
    pub fn build(spec: &MeshSpec) -> Result<SlitMesh> {
        let MeshSpec { lo, hi, slit_tip, h, h_tip, dirichlet } = spec.clone();
        if !(h_tip > 0.0 && h_tip <= h) {
            return Err(Error::Mesh(format!("need 0 < h_tip ≤ h, got h_tip = {h_tip}, h = {h}")));
        }
        if !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return Err(Error::Mesh("empty rectangle".into()));
        }
        let tip_pt = match slit_tip {
            Some(tx) => {
                if !(lo[1] < 0.0 && hi[1] > 0.0 && tx > lo[0] && tx < hi[0]) {
                    return Err(Error::Mesh("slit must run from the left side to an interior tip on y = 0".into()));
                }
                Some([tx, 0.0])
            }
            None => None,
        };
        // Root cells: column and row breaks at the tip abscissa and at y = 0.
        let xs = match slit_tip {
            Some(tx) => join(split(lo[0], tx, h), split(tx, hi[0], h)),
            None => split(lo[0], hi[0], h),
        };
        let ys = if slit_tip.is_some() { join(split(lo[1], 0.0, h), split(0.0, hi[1], h)) } else { split(lo[1], hi[1], h) };
        let lat = Lattice { xs: xs.clone(), ys: ys.clone() };
        let nx = xs.len() - 1;
        let ny = ys.len() - 1;
        let xmax = (nx as u64) << LMAX;
        let ymax = (ny as u64) << LMAX;
        let cell_dims = |c: CellKey| {
            let p0 = lat.point((c.1, c.2));
            let s = size_of(c.0);
            let p1 = lat.point((c.1 + s, c.2 + s));
            [p1[0] - p0[0], p1[1] - p0[1], p0[0], p0[1]]
        };
        let target = |c: CellKey| {
            let [w, hgt, x0, y0] = cell_dims(c);
            let d = match tip_pt {
                Some(tp) => {
                    let dx = (tp[0] - x0.max(tp[0].min(x0 + w))).abs();
                    let dy = (tp[1] - y0.max(tp[1].min(y0 + hgt))).abs();
                    (dx * dx + dy * dy).sqrt()
                }
                None => f64::INFINITY,
            };
            (h_tip + GRADING * d).min(h) < w.max(hgt) * (1.0 - 1e-12)
        };
        let mut refined: HashSet<CellKey> = HashSet::new();
        let mut leaves: Vec<CellKey> = Vec::new();
        let mut stack: Vec<CellKey> = Vec::new();
        for i in 0..nx as u64 {
            for j in 0..ny as u64 {
                stack.push((0, i << LMAX, j << LMAX));
            }
        }
        while let Some(c) = stack.pop() {
            if c.0 < LMAX - 2 && target(c) {
                refined.insert(c);
                let s = size_of(c.0 + 1);
                for (a, b) in [(0, 0), (s, 0), (0, s), (s, s)] {
                    stack.push((c.0 + 1, c.1 + a, c.2 + b));
                }
            } else {
                leaves.push(c);
            }
        }
        let find = |refined: &HashSet<CellKey>, px: u64, py: u64| -> CellKey {
            let mut c = (0u32, (px >> LMAX) << LMAX, (py >> LMAX) << LMAX);
            while refined.contains(&c) {
                let s = size_of(c.0 + 1);
                let a = if px >= c.1 + s { s } else { 0 };
                let b = if py >= c.2 + s { s } else { 0 };
                c = (c.0 + 1, c.1 + a, c.2 + b);
            }
            c
        };
        // 2:1 balance across edges.
        loop {
            let mut to_refine: HashSet<CellKey> = HashSet::new();
            for &c in &leaves {
                let s = size_of(c.0);
                let probes = [
                    (c.1 + s < xmax).then(|| (c.1 + s, c.2 + s / 2)),
                    (c.1 > 0).then(|| (c.1 - 1, c.2 + s / 2)),
                    (c.2 + s < ymax).then(|| (c.1 + s / 2, c.2 + s)),
                    (c.2 > 0).then(|| (c.1 + s / 2, c.2 - 1)),
                ];
                for (px, py) in probes.into_iter().flatten() {
                    let nb = find(&refined, px, py);
                    if nb.0 + 1 < c.0 {
                        to_refine.insert(nb);
                    }
                }
            }
            if to_refine.is_empty() {
                break;
            }
            let mut sorted: Vec<CellKey> = to_refine.into_iter().collect();
            sorted.sort_unstable();
            for c in sorted {
                refined.insert(c);
                let s = size_of(c.0 + 1);
                for (a, b) in [(0, 0), (s, 0), (0, s), (s, s)] {
                    leaves.push((c.0 + 1, c.1 + a, c.2 + b));
                }
            }
            leaves.retain(|c| !refined.contains(c));
        }
        leaves.sort_unstable_by_key(|c| (c.2, c.1, c.0));
        // Vertices.
        let mut index: HashMap<(u64, u64), usize> = HashMap::new();
        let mut keys: Vec<(u64, u64)> = Vec::new();
        let add = |k: (u64, u64), index: &mut HashMap<(u64, u64), usize>, keys: &mut Vec<(u64, u64)>| -> usize {
            *index.entry(k).or_insert_with(|| {
                keys.push(k);
                keys.len() - 1
            })
        };
        for &c in &leaves {
            let s = size_of(c.0);
            for k in [(c.1, c.2), (c.1 + s, c.2), (c.1 + s, c.2 + s), (c.1, c.2 + s)] {
                add(k, &mut index, &mut keys);
            }
        }
        let y0_key = if slit_tip.is_some() { Some(((ys.iter().position(|&y| y == 0.0).unwrap_or(0)) as u64) << LMAX) } else { None };
        let mut tris: Vec<[usize; 3]> = Vec::new();
        let mut upper: Vec<bool> = Vec::new();
        for &c in &leaves {
            let s = size_of(c.0);
            let m = s / 2;
            let corners = [(c.1, c.2), (c.1 + s, c.2), (c.1 + s, c.2 + s), (c.1, c.2 + s)];
            let mids = [(c.1 + m, c.2), (c.1 + s, c.2 + m), (c.1 + m, c.2 + s), (c.1, c.2 + m)];
            let is_up = y0_key.is_none_or(|y0| c.2 >= y0);
            let present: Vec<bool> = mids.iter().map(|k| index.contains_key(k)).collect();
            let ci: Vec<usize> = corners.iter().map(|k| index[k]).collect();
            if present.iter().all(|p| !p) {
                // Diagonal mirrored across y = 0 so the mesh is symmetric about the slit.
                if is_up {
                    tris.push([ci[0], ci[1], ci[2]]);
                    tris.push([ci[0], ci[2], ci[3]]);
                } else {
                    tris.push([ci[0], ci[1], ci[3]]);
                    tris.push([ci[1], ci[2], ci[3]]);
                }
                upper.push(is_up);
                upper.push(is_up);
            } else {
                let centre = add((c.1 + m, c.2 + m), &mut index, &mut keys);
                let mut ring = Vec::with_capacity(8);
                for e in 0..4 {
                    ring.push(ci[e]);
                    if present[e] {
                        ring.push(index[&mids[e]]);
                    }
                }
                for k in 0..ring.len() {
                    tris.push([centre, ring[k], ring[(k + 1) % ring.len()]]);
                    upper.push(is_up);
                }
            }
        }
        let mut vertices: Vec<[f64; 2]> = keys.iter().map(|&k| lat.point(k)).collect();
        // Lip duplication strictly left of the tip.
        let mut lips = Vec::new();
        let mut tip = None;
        if let (Some(y0), Some(tx)) = (y0_key, slit_tip) {
            let tip_key = ((xs.iter().position(|&x| x == tx).unwrap_or(0)) as u64) << LMAX;
            tip = index.get(&(tip_key, y0)).copied();
            let mut dup: HashMap<usize, usize> = HashMap::new();
            let mut on_slit: Vec<(u64, usize)> = keys
                .iter()
                .enumerate()
                .filter(|(_, k)| k.1 == y0 && k.0 < tip_key)
                .map(|(i, k)| (k.0, i))
                .collect();
            on_slit.sort_unstable();
            for (_, i) in on_slit {
                let j = vertices.len();
                vertices.push(vertices[i]);
                dup.insert(i, j);
                lips.push((i, j));
            }
            for (t, &up) in tris.iter_mut().zip(&upper) {
                if !up {
                    for v in t.iter_mut() {
                        if let Some(&d) = dup.get(v) {
                            *v = d;
                        }
                    }
                }
            }
        }
        let eps = 1e-12 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let dir: Vec<bool> = vertices
            .iter()
            .map(|p| {
                (dirichlet[0] && (p[1] - lo[1]).abs() < eps)
                    || (dirichlet[1] && (p[0] - hi[0]).abs() < eps)
                    || (dirichlet[2] && (p[1] - hi[1]).abs() < eps)
                    || (dirichlet[3] && (p[0] - lo[0]).abs() < eps)
            })
            .collect();
        let mut min_angle = 180.0f64;
        let mut h_min = f64::INFINITY;
        let mut bad = Vec::new();
        for (k, t) in tris.iter().enumerate() {
            let p = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
            let a = signed_area(&p);
            if a <= 0.0 {
                return Err(Error::Mesh(format!("triangle {k} has non-positive area {a}")));
            }
            let ang = min_angle_of(&p);
            if ang < 20.0 {
                bad.push(k);
            }
            min_angle = min_angle.min(ang);
            for e in 0..3 {
                h_min = h_min.min(dual::norm(dual::sub(p[e], p[(e + 1) % 3])));
            }
        }
        if !bad.is_empty() {
            return Err(Error::Mesh(format!(
                "{} triangles below 20° (first: {:?}); reduce the root-cell aspect ratio",
                bad.len(),
                &bad[..bad.len().min(5)]
            )));
        }
        let locator = Locator::new(&vertices, &tris, lo, hi);
        Ok(SlitMesh { vertices, triangles: tris, upper, lips, tip, dirichlet: dir, min_angle_deg: min_angle, h_min, locator })
    }

    pub fn n_dofs(&self) -> usize {
        self.vertices.len()
    }

    pub fn area(&self) -> f64 {
        dual::pairwise_sum(&self.triangles.iter().map(|t| signed_area(&self.tri_points(t))).collect::<Vec<_>>())
    }

    fn tri_points(&self, t: &[usize; 3]) -> [[f64; 2]; 3] {
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    /// Triangle containing `y` with barycentric coordinates. Points on the
    /// slit line are assigned to the lip selected by the sign of `y2`
    /// (including the sign of zero).
    pub fn locate(&self, y: [f64; 2]) -> Result<(usize, [f64; 3])> {
        let up = !y[1].is_sign_negative();
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &k in self.locator.candidates(y) {
            let t = &self.triangles[k];
            let b = barycentric(&self.tri_points(t), y);
            let m = b[0].min(b[1]).min(b[2]);
            let side_ok = self.lips.is_empty() || self.upper[k] == up || y[1].abs() > 1e-14;
            if side_ok && best.is_none_or(|(_, _, bm)| m > bm) {
                best = Some((k, b, m));
            }
        }
        match best {
            Some((k, b, m)) if m >= -1e-10 => Ok((k, b)),
            _ => Err(Error::Locate(y)),
        }
    }

    /// P1 interpolation of nodal `v`: value and gradient at `y`.
    pub fn interpolate(&self, v: &[f64], y: [f64; 2]) -> Result<(f64, [f64; 2])> {
        let (k, b) = self.locate(y)?;
        let t = &self.triangles[k];
        let (g, _) = p1_gradients(&self.tri_points(t));
        let val = b[0] * v[t[0]] + b[1] * v[t[1]] + b[2] * v[t[2]];
        let mut grad = [0.0; 2];
        for i in 0..3 {
            grad[0] += g[i][0] * v[t[i]];
            grad[1] += g[i][1] * v[t[i]];
        }
        Ok((val, grad))
    }

    /// Nodal interpolant of `f`, evaluated on the lip side of each vertex.
    pub fn interpolant<F: Fn([f64; 2], bool) -> f64>(&self, f: F) -> Vec<f64> {
        let lower: HashSet<usize> = self.lips.iter().map(|l| l.1).collect();
        self.vertices.iter().enumerate().map(|(i, &p)| f(p, !lower.contains(&i))).collect()
    }

    /// Plain-text export.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# crackbal mesh v1\n");
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", v[0], v[1]);
        }
        let _ = writeln!(s, "triangles {}", self.triangles.len());
        for (t, up) in self.triangles.iter().zip(&self.upper) {
            let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], u8::from(*up));
        }
        let _ = writeln!(s, "lips {}", self.lips.len());
        for l in &self.lips {
            let _ = writeln!(s, "{} {}", l.0, l.1);
        }
        let _ = writeln!(s, "tip {}", self.tip.map(|t| t as i64).unwrap_or(-1));
        let _ = writeln!(s, "dirichlet {}", self.dirichlet.iter().filter(|d| **d).count());
        for (i, d) in self.dirichlet.iter().enumerate() {
            if *d {
                let _ = writeln!(s, "{i}");
            }
        }
        s
    }

    /// Inverse of [`SlitMesh::to_text`].
    pub fn from_text(text: &str) -> Result<SlitMesh> {
        let bad = |what: &str| Error::Mesh(format!("malformed mesh file: {what}"));
        let mut all: Vec<&str> = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).collect();
        all.reverse();
        let mut next = || all.pop().ok_or_else(|| bad("truncated"));
        let count = |l: &str, name: &str| -> Result<i64> {
            let mut it = l.split_whitespace();
            if it.next() != Some(name) {
                return Err(bad(name));
            }
            it.next().ok_or_else(|| bad(name))?.parse::<i64>().map_err(|_| bad(name))
        };
        let nums = |l: &str| -> Result<Vec<f64>> {
            l.split_whitespace().map(|w| w.parse::<f64>().map_err(|_| bad(l))).collect()
        };
        let nv = count(next()?, "vertices")? as usize;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let v = nums(next()?)?;
            vertices.push([v[0], v[1]]);
        }
        let nt = count(next()?, "triangles")? as usize;
        let mut triangles = Vec::with_capacity(nt);
        let mut upper = Vec::with_capacity(nt);
        for _ in 0..nt {
            let v = nums(next()?)?;
            triangles.push([v[0] as usize, v[1] as usize, v[2] as usize]);
            upper.push(v[3] != 0.0);
        }
        let nl = count(next()?, "lips")? as usize;
        let mut lips = Vec::with_capacity(nl);
        for _ in 0..nl {
            let v = nums(next()?)?;
            lips.push((v[0] as usize, v[1] as usize));
        }
        let tip = count(next()?, "tip")?;
        let nd = count(next()?, "dirichlet")? as usize;
        let mut dirichlet = vec![false; nv];
        for _ in 0..nd {
            let i = nums(next()?)?[0] as usize;
            *dirichlet.get_mut(i).ok_or_else(|| bad("dirichlet index"))? = true;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let mut min_angle = 180.0f64;
        let mut h_min = f64::INFINITY;
        for t in &triangles {
            let p = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
            min_angle = min_angle.min(min_angle_of(&p));
            for e in 0..3 {
                h_min = h_min.min(dual::norm(dual::sub(p[e], p[(e + 1) % 3])));
            }
        }
        let locator = Locator::new(&vertices, &triangles, lo, hi);
        Ok(SlitMesh {
            vertices,
            triangles,
            upper,
            lips,
            tip: (tip >= 0).then_some(tip as usize),
            dirichlet,
            min_angle_deg: min_angle,
            h_min,
            locator,
        })
    }
}

impl Locator {
    fn new(vertices: &[[f64; 2]], tris: &[[usize; 3]], lo: [f64; 2], hi: [f64; 2]) -> Locator {
        let n = ((tris.len() as f64).sqrt().ceil() as usize).clamp(1, 512);
        let cell = [(hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64];
        let mut buckets = vec![Vec::new(); n * n];
        let idx = |v: f64, k: usize| (((v - lo[k]) / cell[k]).floor().max(0.0) as usize).min(n - 1);
        for (k, t) in tris.iter().enumerate() {
            let xs = t.map(|i| vertices[i][0]);
            let ys = t.map(|i| vertices[i][1]);
            let (x0, x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            let (y0, y1) = (ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            for i in idx(x0, 0)..=idx(x1, 0) {
                for j in idx(y0, 1)..=idx(y1, 1) {
                    buckets[j * n + i].push(k);
                }
            }
        }
        Locator { lo, cell, n: [n, n], buckets }
    }

    fn candidates(&self, y: [f64; 2]) -> &[usize] {
        let i = ((y[0] - self.lo[0]) / self.cell[0]).floor();
        let j = ((y[1] - self.lo[1]) / self.cell[1]).floor();
        let tol = 1e-9;
        if i < -tol || j < -tol || i > self.n[0] as f64 + tol || j > self.n[1] as f64 + tol {
            return &[];
        }
        let i = (i.max(0.0) as usize).min(self.n[0] - 1);
        let j = (j.max(0.0) as usize).min(self.n[1] - 1);
        &self.buckets[j * self.n[0] + i]
    }
}

fn signed_area(p: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]))
}

fn min_angle_of(p: &[[f64; 2]; 3]) -> f64 {
    (0..3)
        .map(|i| {
            let a = dual::sub(p[(i + 1) % 3], p[i]);
            let b = dual::sub(p[(i + 2) % 3], p[i]);
            (dual::dot(a, b) / (dual::norm(a) * dual::norm(b))).clamp(-1.0, 1.0).acos().to_degrees()
        })
        .fold(180.0, f64::min)
}

fn barycentric(p: &[[f64; 2]; 3], y: [f64; 2]) -> [f64; 3] {
    let a = signed_area(p);
    let b1 = signed_area(&[y, p[1], p[2]]) / a;
    let b2 = signed_area(&[p[0], y, p[2]]) / a;
    [b1, b2, 1.0 - b1 - b2]
}

/// Gradients of the three hat functions and the triangle area.
fn p1_gradients(p: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let a = signed_area(p);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        g[i] = [(p[j][1] - p[k][1]) / (2.0 * a), (p[k][0] - p[j][0]) / (2.0 * a)];
    }
    (g, a)
}

/// Degree-2 rule (3 interior points) and the degree-5 seven-point rule, in
/// barycentric coordinates with weights summing to 1.
fn rule3() -> Vec<([f64; 3], f64)> {
    let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
    vec![([a, b, b], 1.0 / 3.0), ([b, a, b], 1.0 / 3.0), ([b, b, a], 1.0 / 3.0)]
}

fn rule7() -> Vec<([f64; 3], f64)> {
    let s15 = 15f64.sqrt();
    let a1 = (6.0 - s15) / 21.0;
    let b1 = (9.0 + 2.0 * s15) / 21.0;
    let a2 = (6.0 + s15) / 21.0;
    let b2 = (9.0 - 2.0 * s15) / 21.0;
    let w1 = (155.0 - s15) / 1200.0;
    let w2 = (155.0 + s15) / 1200.0;
    let third = 1.0 / 3.0;
    vec![
        ([third, third, third], 9.0 / 40.0),
        ([b1, a1, a1], w1),
        ([a1, b1, a1], w1),
        ([a1, a1, b1], w1),
        ([b2, a2, a2], w2),
        ([a2, b2, a2], w2),
        ([a2, a2, b2], w2),
    ]
}

/// Coefficients of the transformed equation at one point.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct CoefSample {
    pub a4: [[f64; 2]; 2],
    pub p: [f64; 2],
    pub q: [f64; 2],
    pub g: f64,
}

pub trait WaveCoefficients: Sync {
    fn eval(&self, t: f64, y: [f64; 2]) -> Result<CoefSample>;
    /// Whether `A⁽⁴⁾`, `p` or `q` change in time (the load may change regardless).
    fn operators_time_dependent(&self) -> bool;
}

pub type Forcing = Arc<dyn Fn(f64, [f64; 2]) -> f64 + Send + Sync>;

/// Constant `A⁽⁴⁾`, `p`, `q` with an optional load.
#[derive(Clone)]
pub struct ConstantCoefficients {
    pub a: [[f64; 2]; 2],
    pub p: [f64; 2],
    pub q: [f64; 2],
    pub g: Option<Forcing>,
}

impl ConstantCoefficients {
    pub fn laplace() -> ConstantCoefficients {
        ConstantCoefficients { a: [[1.0, 0.0], [0.0, 1.0]], p: [0.0; 2], q: [0.0; 2], g: None }
    }
}

impl WaveCoefficients for ConstantCoefficients {
    fn eval(&self, t: f64, y: [f64; 2]) -> Result<CoefSample> {
        Ok(CoefSample { a4: self.a, p: self.p, q: self.q, g: self.g.as_ref().map_or(0.0, |g| g(t, y)) })
    }

    fn operators_time_dependent(&self) -> bool {
        false
    }
}

/// Coefficients produced by a chart pipeline; `f` is the physical load.
#[derive(Clone)]
pub struct PipelineCoefficients {
    pub pipeline: Pipeline,
    pub f: Option<Forcing>,
}

impl WaveCoefficients for PipelineCoefficients {
    fn eval(&self, t: f64, y: [f64; 2]) -> Result<CoefSample> {
        let x = self.pipeline.phi_inverse(t, y)?;
        let c = self.pipeline.coefficients_at(t, x);
        Ok(CoefSample { a4: c.a4, p: c.p, q: c.q, g: self.f.as_ref().map_or(0.0, |f| f(t, x)) })
    }

    fn operators_time_dependent(&self) -> bool {
        true
    }
}

/// Fixed transformed domain of one chart window: an axis-aligned rectangle
/// with the slit along `y2 = 0` from its left side to the origin.
#[derive(Clone, Debug)]
pub struct TransformedProblem {
    pub pipeline: Pipeline,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    /// Dirichlet flags for the bottom, right, top and left sides.
    pub dirichlet: [bool; 4],
    pub t0: f64,
    pub t1: f64,
}

impl TransformedProblem {
    /// Uses the first window of `windows`; the run stops at its end.
    pub fn new(windows: &Windows, domain: &Domain) -> Result<TransformedProblem> {
        let p = windows.pipelines.first().ok_or_else(|| Error::Solver("no chart window".into()))?.clone();
        let t1 = windows.ends[0];
        let (lo, hi) = domain.bbox();
        let rect = domain.vertices.len() == 4
            && (domain.area() - (hi[0] - lo[0]) * (hi[1] - lo[1])).abs() < 1e-12 * domain.area();
        if !rect {
            return Err(Error::Solver("the solver needs a rectangular physical domain".into()));
        }
        let CrackPath::Segment { start, .. } = p.path else {
            return Err(Error::Solver("the solver needs a straight crack".into()));
        };
        let ph = p.stage(Stage::Phi);
        let tol = 1e-9 * domain.diameter();
        let img0: Vec<[f64; 2]> = domain.vertices.iter().map(|&c| ph.value(p.t0, c)).collect();
        for (&c, a) in domain.vertices.iter().zip(&img0) {
            if dual::norm(dual::sub(*a, ph.value(t1, c))) > tol {
                return Err(Error::Solver("Φ(t) moves the domain corners; the transformed domain is not fixed".into()));
            }
        }
        let (mut ylo, mut yhi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &img0 {
            for k in 0..2 {
                ylo[k] = ylo[k].min(v[k]);
                yhi[k] = yhi[k].max(v[k]);
            }
        }
        let on_box = |v: [f64; 2]| {
            ((v[0] - ylo[0]).abs() < tol || (v[0] - yhi[0]).abs() < tol)
                && ((v[1] - ylo[1]).abs() < tol || (v[1] - yhi[1]).abs() < tol)
        };
        if !img0.iter().all(|&v| on_box(v)) {
            return Err(Error::Solver("the transformed domain is not an axis-aligned rectangle".into()));
        }
        let sy = ph.value(p.t0, start);
        if sy[1].abs() > tol || (sy[0] - ylo[0]).abs() > tol {
            return Err(Error::Solver("the crack must start on the left side of the transformed rectangle".into()));
        }
        let mut dirichlet = [false; 4];
        for (i, &flag) in domain.dirichlet.iter().enumerate() {
            if !flag {
                continue;
            }
            let (a, b) = domain.edge(i);
            let m = ph.value(p.t0, dual::scale(0.5, dual::add(a, b)));
            let side = if (m[1] - ylo[1]).abs() < tol {
                0
            } else if (m[0] - yhi[0]).abs() < tol {
                1
            } else if (m[1] - yhi[1]).abs() < tol {
                2
            } else {
                3
            };
            dirichlet[side] = true;
        }
        let t0 = p.t0;
        Ok(TransformedProblem { pipeline: p, lo: ylo, hi: yhi, dirichlet, t0, t1 })
    }

    pub fn mesh_spec(&self, h: f64, h_tip: f64) -> MeshSpec {
        MeshSpec { lo: self.lo, hi: self.hi, slit_tip: Some(0.0), h, h_tip, dirichlet: self.dirichlet }
    }
}

/// Physical energy `½∫(u̇² + A∇u·∇u) dx` of a discrete state, computed on
/// the mesh as `½∫((v̇ + ∇v·Φ̇)² + B∇v·∇v) J⁻¹ dy` with `B = DΦ A DΦᵀ`.
pub fn physical_energy(mesh: &SlitMesh, p: &Pipeline, s: &WaveState) -> Result<f64> {
    let parts: Vec<Result<f64>> = mesh
        .triangles
        .par_iter()
        .map(|tri| {
            let pts = mesh.tri_points(tri);
            let (g, area) = p1_gradients(&pts);
            let mut gv = [0.0; 2];
            for i in 0..3 {
                gv[0] += g[i][0] * s.v[tri[i]];
                gv[1] += g[i][1] * s.v[tri[i]];
            }
            let mut acc = 0.0;
            for (b, w) in rule7() {
                let y = [
                    b[0] * pts[0][0] + b[1] * pts[1][0] + b[2] * pts[2][0],
                    b[0] * pts[0][1] + b[1] * pts[1][1] + b[2] * pts[2][1],
                ];
                let x = p.phi_inverse(s.t, y)?;
                let (_, d, dt) = p.stage(Stage::Phi).jacobian(s.t, x);
                let bm = dual::mat_mul(dual::mat_mul(d, p.a.at(x)), dual::transpose(d));
                let wv = b[0] * s.w[tri[0]] + b[1] * s.w[tri[1]] + b[2] * s.w[tri[2]];
                let ut = wv + dual::dot(gv, dt);
                acc += w * area * 0.5 * (ut * ut + dual::dot(gv, matvec2(bm, gv))) / dual::det(d);
            }
            Ok(acc)
        })
        .collect();
    Ok(dual::pairwise_sum(&parts.into_iter().collect::<Result<Vec<_>>>()?))
}

/// Compressed sparse rows with a shared pattern.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    fn pattern(n: usize, tris: &[[usize; 3]]) -> Csr {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for t in tris {
            for &i in t {
                for &j in t {
                    rows[i].push(j);
                }
            }
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        for (i, r) in rows.iter_mut().enumerate() {
            r.push(i);
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(r);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        Csr { n, row_ptr, cols, vals: vec![0.0; nnz] }
    }

    fn pos(&self, i: usize, j: usize) -> usize {
        let r = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        self.row_ptr[i] + r.binary_search(&j).expect("entry in pattern")
    }

    fn zeroed(&self) -> Csr {
        Csr { vals: vec![0.0; self.vals.len()], ..self.clone() }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| self.vals[k] * x[self.cols[k]]).sum())
            .collect()
    }

    /// `Σ cᵢ Mᵢ` over matrices sharing this pattern.
    fn combine(&self, terms: &[(f64, &Csr)]) -> Csr {
        let mut out = self.zeroed();
        for (c, m) in terms {
            for (o, v) in out.vals.iter_mut().zip(&m.vals) {
                *o += c * v;
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.vals[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum()).collect()
    }

    pub fn total(&self) -> f64 {
        dual::pairwise_sum(&self.vals)
    }
}

/// Mass, stiffness, advection (`p`), cross (`q`) operators and load.
#[derive(Clone, Debug)]
pub struct Operators {
    pub mass: Csr,
    pub stiffness: Csr,
    pub advection: Csr,
    pub cross: Csr,
    pub load: Vec<f64>,
}

/// Finite-element discretisation on a fixed mesh.
pub struct Discretization<'a, C: WaveCoefficients> {
    pub mesh: &'a SlitMesh,
    pub coeffs: &'a C,
    pattern: Csr,
    mass: Csr,
    /// Triangles that use the seven-point rule.
    fine: Vec<bool>,
}

impl<'a, C: WaveCoefficients> Discretization<'a, C> {
    pub fn new(mesh: &'a SlitMesh, coeffs: &'a C) -> Self {
        let pattern = Csr::pattern(mesh.n_dofs(), &mesh.triangles);
        let mut mass = pattern.zeroed();
        for t in &mesh.triangles {
            let a = signed_area(&mesh.tri_points(t));
            for i in 0..3 {
                for j in 0..3 {
                    let k = mass.pos(t[i], t[j]);
                    mass.vals[k] += a / 12.0 * if i == j { 2.0 } else { 1.0 };
                }
            }
        }
        // Two layers around the tip: triangles within twice their own size.
        let fine = mesh
            .triangles
            .iter()
            .map(|t| match mesh.tip {
                Some(tip) => {
                    let tp = mesh.vertices[tip];
                    let p = mesh.tri_points(t);
                    let size = (0..3).map(|e| dual::norm(dual::sub(p[e], p[(e + 1) % 3]))).fold(0.0, f64::max);
                    p.iter().any(|v| dual::norm(dual::sub(*v, tp)) <= 2.0 * size)
                }
                None => false,
            })
            .collect();
        Discretization { mesh, coeffs, pattern, mass, fine }
    }

    pub fn mass(&self) -> &Csr {
        &self.mass
    }

    /// Operators at time `t`.
    pub fn assemble(&self, t: f64) -> Result<Operators> {
        type Local = ([[f64; 3]; 3], [[f64; 3]; 3], [[f64; 3]; 3], [f64; 3]);
        let locals: Vec<Result<Local>> = self
            .mesh
            .triangles
            .par_iter()
            .zip(self.fine.par_iter())
            .map(|(tri, &fine)| {
                let p = self.mesh.tri_points(tri);
                let (g, area) = p1_gradients(&p);
                let mut k = [[0.0; 3]; 3];
                let mut adv = [[0.0; 3]; 3];
                let mut cr = [[0.0; 3]; 3];
                let mut f = [0.0; 3];
                for (b, w) in if fine { rule7() } else { rule3() } {
                    let y = [
                        b[0] * p[0][0] + b[1] * p[1][0] + b[2] * p[2][0],
                        b[0] * p[0][1] + b[1] * p[1][1] + b[2] * p[2][1],
                    ];
                    let c = self.coeffs.eval(t, y)?;
                    let vals = [c.a4[0][0], c.a4[0][1], c.a4[1][0], c.a4[1][1], c.p[0], c.p[1], c.q[0], c.q[1], c.g];
                    if vals.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Assembly(format!("non-finite coefficient at t = {t}, y = {y:?}")));
                    }
                    let wa = w * area;
                    for i in 0..3 {
                        f[i] += wa * c.g * b[i];
                        for j in 0..3 {
                            let agj = matvec2(c.a4, g[j]);
                            k[i][j] += wa * dual::dot(agj, g[i]);
                            adv[i][j] += wa * dual::dot(c.p, g[j]) * b[i];
                            cr[i][j] += wa * dual::dot(c.q, g[j]) * b[i];
                        }
                    }
                }
                Ok((k, adv, cr, f))
            })
            .collect();
        let mut stiffness = self.pattern.zeroed();
        let mut advection = self.pattern.zeroed();
        let mut cross = self.pattern.zeroed();
        let mut load = vec![0.0; self.mesh.n_dofs()];
        for (tri, l) in self.mesh.triangles.iter().zip(locals) {
            let (k, adv, cr, f) = l?;
            for i in 0..3 {
                load[tri[i]] += f[i];
                for j in 0..3 {
                    let pos = self.pattern.pos(tri[i], tri[j]);
                    stiffness.vals[pos] += k[i][j];
                    advection.vals[pos] += adv[i][j];
                    cross.vals[pos] += cr[i][j];
                }
            }
        }
        Ok(Operators { mass: self.mass.clone(), stiffness, advection, cross, load })
    }
}

fn matvec2(m: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// Displacement, velocity and acceleration at time `t`.
#[derive(Clone, Debug, Serialize)]
pub struct WaveState {
    pub t: f64,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
}

struct Factored {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    matrix: Csr,
}

fn factor(m: &Csr, dirichlet: &[bool]) -> Result<Factored> {
    let mut trip = Vec::with_capacity(m.vals.len());
    let mut kept = m.clone();
    for i in 0..m.n {
        for k in m.row_ptr[i]..m.row_ptr[i + 1] {
            let j = m.cols[k];
            let v = if dirichlet[i] || dirichlet[j] {
                if i == j { 1.0 } else { 0.0 }
            } else {
                m.vals[k]
            };
            kept.vals[k] = v;
            if v != 0.0 {
                trip.push(Triplet::new(i, j, v));
            }
        }
    }
    let sp = SparseColMat::<usize, f64>::try_new_from_triplets(m.n, m.n, &trip)
        .map_err(|e| Error::Solver(format!("sparse matrix: {e:?}")))?;
    let lu = sp.sp_lu().map_err(|e| Error::Solver(format!("LU factorisation failed: {e:?}")))?;
    Ok(Factored { lu, matrix: kept })
}

fn solve(f: &Factored, rhs: &[f64], dirichlet: &[bool]) -> Result<Vec<f64>> {
    let b = faer::Col::<f64>::from_fn(rhs.len(), |i| if dirichlet[i] { 0.0 } else { rhs[i] });
    let x = f.lu.solve(&b);
    let x: Vec<f64> = (0..rhs.len()).map(|i| x[i]).collect();
    let r = f.matrix.matvec(&x);
    let bn = (0..rhs.len()).map(|i| b[i] * b[i]).sum::<f64>().sqrt();
    let rn = r.iter().enumerate().map(|(i, v)| (v - b[i]).powi(2)).sum::<f64>().sqrt();
    if bn > 0.0 && rn > 1e-10 * bn {
        return Err(Error::Solver(format!("linear solve residual {:.3e} exceeds 1e-10 relative", rn / bn)));
    }
    Ok(x)
}

/// Average-acceleration Newmark integrator.
pub struct Newmark<'a, C: WaveCoefficients> {
    pub disc: Discretization<'a, C>,
    pub dt: f64,
    ops: Operators,
    cached: Option<Factored>,
}

impl<'a, C: WaveCoefficients> Newmark<'a, C> {
    /// Consistent initial acceleration from `M a0 = F − (K + P) v0 + 2C w0`.
    pub fn new(disc: Discretization<'a, C>, dt: f64, t0: f64, v0: Vec<f64>, w0: Vec<f64>) -> Result<(Self, WaveState)> {
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::Solver(format!("time step must be positive, got {dt}")));
        }
        let ops = disc.assemble(t0)?;
        let dir = &disc.mesh.dirichlet;
        let v0: Vec<f64> = v0.iter().zip(dir).map(|(v, d)| if *d { 0.0 } else { *v }).collect();
        let w0: Vec<f64> = w0.iter().zip(dir).map(|(v, d)| if *d { 0.0 } else { *v }).collect();
        let kv = ops.stiffness.combine(&[(1.0, &ops.stiffness), (1.0, &ops.advection)]).matvec(&v0);
        let cw = ops.cross.matvec(&w0);
        let rhs: Vec<f64> = (0..v0.len()).map(|i| ops.load[i] - kv[i] + 2.0 * cw[i]).collect();
        let fm = factor(&ops.mass, dir)?;
        let a0 = solve(&fm, &rhs, dir)?;
        Ok((Newmark { disc, dt, ops, cached: None }, WaveState { t: t0, v: v0, w: w0, a: a0 }))
    }

    pub fn step(&mut self, s: &WaveState) -> Result<WaveState> {
        let dt = self.dt;
        let t1 = s.t + dt;
        let dir = &self.disc.mesh.dirichlet;
        let dependent = self.disc.coeffs.operators_time_dependent();
        let ops = if dependent || self.cached.is_none() {
            self.disc.assemble(t1)?
        } else {
            let mut o = self.ops.clone();
            o.load = self.disc.assemble_load(t1)?;
            o
        };
        let kp = ops.stiffness.combine(&[(1.0, &ops.stiffness), (1.0, &ops.advection)]);
        if dependent || self.cached.is_none() {
            let sys = ops.mass.combine(&[(1.0, &ops.mass), (0.25 * dt * dt, &kp), (-dt, &ops.cross)]);
            self.cached = Some(factor(&sys, dir)?);
        }
        let n = s.v.len();
        let pred_v: Vec<f64> = (0..n).map(|i| s.v[i] + dt * s.w[i] + 0.25 * dt * dt * s.a[i]).collect();
        let pred_w: Vec<f64> = (0..n).map(|i| s.w[i] + 0.5 * dt * s.a[i]).collect();
        let kv = kp.matvec(&pred_v);
        let cw = ops.cross.matvec(&pred_w);
        let rhs: Vec<f64> = (0..n).map(|i| ops.load[i] - kv[i] + 2.0 * cw[i]).collect();
        let a1 = solve(self.cached.as_ref().expect("factored"), &rhs, dir)?;
        let v1 = (0..n).map(|i| pred_v[i] + 0.25 * dt * dt * a1[i]).collect();
        let w1 = (0..n).map(|i| pred_w[i] + 0.5 * dt * a1[i]).collect();
        self.ops = ops;
        Ok(WaveState { t: t1, v: v1, w: w1, a: a1 })
    }

    /// `½ wᵀMw + ½ vᵀKv` with the current stiffness.
    pub fn energy(&self, s: &WaveState) -> f64 {
        let mw = self.ops.mass.matvec(&s.w);
        let kv = self.ops.stiffness.matvec(&s.v);
        0.5 * (dot(&s.w, &mw) + dot(&s.v, &kv))
    }

    pub fn operators(&self) -> &Operators {
        &self.ops
    }
}

impl<C: WaveCoefficients> Discretization<'_, C> {
    /// Load vector only.
    pub fn assemble_load(&self, t: f64) -> Result<Vec<f64>> {
        let locals: Vec<Result<[f64; 3]>> = self
            .mesh
            .triangles
            .par_iter()
            .zip(self.fine.par_iter())
            .map(|(tri, &fine)| {
                let p = self.mesh.tri_points(tri);
                let area = signed_area(&p);
                let mut f = [0.0; 3];
                for (b, w) in if fine { rule7() } else { rule3() } {
                    let y = [
                        b[0] * p[0][0] + b[1] * p[1][0] + b[2] * p[2][0],
                        b[0] * p[0][1] + b[1] * p[1][1] + b[2] * p[2][1],
                    ];
                    let g = self.coeffs.eval(t, y)?.g;
                    if !g.is_finite() {
                        return Err(Error::Assembly(format!("non-finite load at t = {t}, y = {y:?}")));
                    }
                    for i in 0..3 {
                        f[i] += w * area * g * b[i];
                    }
                }
                Ok(f)
            })
            .collect();
        let mut load = vec![0.0; self.mesh.n_dofs()];
        for (tri, l) in self.mesh.triangles.iter().zip(locals) {
            let f = l?;
            for i in 0..3 {
                load[tri[i]] += f[i];
            }
        }
        Ok(load)
    }

    /// `‖e‖_{L²}` of `v_h − exact` with the seven-point rule.
    pub fn l2_error<F: Fn([f64; 2]) -> f64>(&self, v: &[f64], exact: F) -> f64 {
        let mut acc = Vec::with_capacity(self.mesh.triangles.len());
        for tri in &self.mesh.triangles {
            let p = self.mesh.tri_points(tri);
            let area = signed_area(&p);
            let mut s = 0.0;
            for (b, w) in rule7() {
                let y = [
                    b[0] * p[0][0] + b[1] * p[1][0] + b[2] * p[2][0],
                    b[0] * p[0][1] + b[1] * p[1][1] + b[2] * p[2][1],
                ];
                let vh = b[0] * v[tri[0]] + b[1] * v[tri[1]] + b[2] * v[tri[2]];
                s += w * area * (vh - exact(y)).powi(2);
            }
            acc.push(s);
        }
        dual::pairwise_sum(&acc).sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Physical field `u(t, x) = v(t, Φ(t, x))` from a discrete state.
pub struct Pullback<'a> {
    pub mesh: &'a SlitMesh,
    pub pipeline: &'a Pipeline,
    pub state: &'a WaveState,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PulledBack {
    pub u: f64,
    pub ut: f64,
    pub grad: [f64; 2],
}

impl Pullback<'_> {
    /// `u`, `u̇ = v̇∘Φ + (∇v∘Φ)·Φ̇`, `∇u = DΦᵀ (∇v∘Φ)`.
    pub fn eval(&self, x: [f64; 2]) -> Result<PulledBack> {
        let t = self.state.t;
        let (y, d, dt) = self.pipeline.stage(Stage::Phi).jacobian(t, x);
        let (v, gv) = self.mesh.interpolate(&self.state.v, y)?;
        let (w, _) = self.mesh.interpolate(&self.state.w, y)?;
        Ok(PulledBack {
            u: v,
            ut: w + dual::dot(gv, dt),
            grad: [d[0][0] * gv[0] + d[1][0] * gv[1], d[0][1] * gv[0] + d[1][1] * gv[1]],
        })
    }
}

/// Snapshot CSV: `vertex,x,y,v,w,a`.
pub fn snapshot_csv(mesh: &SlitMesh, s: &WaveState) -> String {
    let mut out = String::from("vertex,x,y,v,w,a\n");
    for (i, p) in mesh.vertices.iter().enumerate() {
        let _ = writeln!(out, "{i},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", p[0], p[1], s.v[i], s.w[i], s.a[i]);
    }
    out
}

/// One level of a convergence study.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub h_tip: f64,
    pub dt: f64,
    pub dofs: usize,
    pub l2_error: f64,
}

/// Standing mode `v = cos(π(y1 − lo1)/L) cos(πt/L)`, `L = hi1 − lo1`, which
/// solves the undriven Laplace-type problem with natural conditions on every
/// side and on the slit. `Δt = dt_over_h · h`, adjusted to hit `t_end`.
pub fn standing_mode_error(spec: &MeshSpec, dt_over_h: f64, t_end: f64) -> Result<ConvergenceRow> {
    let spec = MeshSpec { dirichlet: [false; 4], ..spec.clone() };
    let mesh = SlitMesh::build(&spec)?;
    let coeffs = ConstantCoefficients::laplace();
    let disc = Discretization::new(&mesh, &coeffs);
    let k = std::f64::consts::PI / (spec.hi[0] - spec.lo[0]);
    let x0 = spec.lo[0];
    let v0 = mesh.interpolant(|p, _| (k * (p[0] - x0)).cos());
    let steps = (t_end / (dt_over_h * spec.h)).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let (mut nm, mut s) = Newmark::new(disc, dt, 0.0, v0, vec![0.0; mesh.n_dofs()])?;
    for _ in 0..steps {
        s = nm.step(&s)?;
    }
    let e = nm.disc.l2_error(&s.v, |y| (k * (y[0] - x0)).cos() * (k * t_end).cos());
    Ok(ConvergenceRow { h: spec.h, h_tip: spec.h_tip, dt, dofs: mesh.n_dofs(), l2_error: e })
}

/// Convergence table under `levels` halvings of `h` and `h_tip`, with the
/// observed orders between consecutive rows.
pub fn standing_mode_study(spec: &MeshSpec, levels: usize, dt_over_h: f64, t_end: f64) -> Result<(Vec<ConvergenceRow>, Vec<f64>)> {
    let rows = (0..levels)
        .map(|l| {
            let f = 0.5f64.powi(l as i32);
            standing_mode_error(&MeshSpec { h: spec.h * f, h_tip: spec.h_tip * f, ..spec.clone() }, dt_over_h, t_end)
        })
        .collect::<Result<Vec<_>>>()?;
    let orders = rows.windows(2).map(|w| (w[0].l2_error / w[1].l2_error).log2()).collect();
    Ok((rows, orders))
}

/// Discrete run of the manufactured field `v = k ξ S` on the transformed
/// domain, driven by the transformed forcing.
pub struct MmsSolve {
    pub mesh: SlitMesh,
    pub dt: f64,
    pub states: Vec<WaveState>,
    /// `½wᵀMw + ½vᵀKv` per state.
    pub discrete_energy: Vec<f64>,
    /// `L²` distance to the exact `v` per state.
    pub l2_error: Vec<f64>,
}

/// Exact transformed field `v(t, y) = k(t) ξ(y) S(y)` and `v̇`; `upper`
/// picks the lip on the slit.
pub fn mms_v(mms: &Mms, t: f64, y: [f64; 2], upper: bool) -> (f64, f64) {
    if y == [0.0, 0.0] {
        return (0.0, 0.0);
    }
    let y = [y[0], if y[1] == 0.0 && !upper { -0.0 } else { y[1] }];
    let base = mms.xi.at(y) * fields::s_value(y);
    let k = mms.k.eval(num_dual::Dual64::from_re(t).derivative());
    (k.re * base, k.eps * base)
}

/// `steps` Newmark steps of size `dt` from `problem.t0`, keeping every
/// `keep`-th state (and the last).
pub fn solve_mms(mms: &Mms, problem: &TransformedProblem, spec: &MeshSpec, dt: f64, steps: usize, keep: usize) -> Result<MmsSolve> {
    if problem.t0 + dt * steps as f64 > problem.t1 + 1e-12 {
        return Err(Error::Solver(format!(
            "run to t = {} leaves the chart window ending at {}",
            problem.t0 + dt * steps as f64,
            problem.t1
        )));
    }
    let mesh = SlitMesh::build(spec)?;
    let m = Arc::new(mms.clone());
    let coeffs = PipelineCoefficients {
        pipeline: problem.pipeline.clone(),
        f: Some(Arc::new(move |t, x| m.eval(t, x).f)),
    };
    let disc = Discretization::new(&mesh, &coeffs);
    let t0 = problem.t0;
    let v0 = mesh.interpolant(|y, up| mms_v(mms, t0, y, up).0);
    let w0 = mesh.interpolant(|y, up| mms_v(mms, t0, y, up).1);
    let (mut nm, mut s) = Newmark::new(disc, dt, t0, v0, w0)?;
    let upper: Vec<bool> = mesh.triangles.iter().zip(&mesh.upper).map(|(_, u)| *u).collect();
    let err = |nm: &Newmark<PipelineCoefficients>, s: &WaveState| l2_error_sided(nm, &upper, &s.v, |y, up| mms_v(mms, s.t, y, up).0);
    let mut states = vec![s.clone()];
    let mut energy = vec![nm.energy(&s)];
    let mut l2 = vec![err(&nm, &s)];
    for i in 1..=steps {
        s = nm.step(&s)?;
        if (keep > 0 && i % keep == 0) || i == steps {
            energy.push(nm.energy(&s));
            l2.push(err(&nm, &s));
            states.push(s.clone());
        }
    }
    drop(nm);
    Ok(MmsSolve { mesh, dt, states, discrete_energy: energy, l2_error: l2 })
}

fn l2_error_sided<C: WaveCoefficients, F: Fn([f64; 2], bool) -> f64>(nm: &Newmark<C>, upper: &[bool], v: &[f64], exact: F) -> f64 {
    let mesh = nm.disc.mesh;
    let acc: Vec<f64> = mesh
        .triangles
        .iter()
        .zip(upper)
        .map(|(tri, &up)| {
            let p = mesh.tri_points(tri);
            let area = signed_area(&p);
            rule7()
                .iter()
                .map(|(b, w)| {
                    let y = [
                        b[0] * p[0][0] + b[1] * p[1][0] + b[2] * p[2][0],
                        b[0] * p[0][1] + b[1] * p[1][1] + b[2] * p[2][1],
                    ];
                    let vh = b[0] * v[tri[0]] + b[1] * v[tri[1]] + b[2] * v[tri[2]];
                    w * area * (vh - exact(y, up)).powi(2)
                })
                .sum()
        })
        .collect();
    dual::pairwise_sum(&acc).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slit_spec(h: f64, h_tip: f64) -> MeshSpec {
        MeshSpec { lo: [-0.5, -0.5], hi: [0.5, 0.5], slit_tip: Some(0.0), h, h_tip, dirichlet: [false; 4] }
    }

    #[test]
    fn mesh_invariants() {
        let m = SlitMesh::build(&slit_spec(0.1, 0.01)).unwrap();
        assert!(m.min_angle_deg >= 20.0);
        assert!((m.area() - 1.0).abs() < 1e-12);
        let tip = m.tip.unwrap();
        assert_eq!(m.vertices[tip], [0.0, 0.0]);
        assert!(m.lips.iter().all(|&(a, b)| m.vertices[a] == m.vertices[b]));
        assert!(m.lips.iter().all(|&(a, _)| m.vertices[a][0] < 0.0));
        assert!(m.lips.iter().any(|&(a, _)| m.vertices[a][0] == -0.5));
        assert!(!m.lips.iter().any(|&(a, b)| a == tip || b == tip));
    }

    #[test]
    fn rejects_coarse_tip() {
        assert!(SlitMesh::build(&slit_spec(0.1, 0.2)).is_err());
    }

    #[test]
    fn laplace_operators() {
        let m = SlitMesh::build(&slit_spec(0.1, 0.02)).unwrap();
        let c = ConstantCoefficients::laplace();
        let d = Discretization::new(&m, &c);
        let ops = d.assemble(0.0).unwrap();
        assert!(ops.stiffness.row_sums().iter().all(|r| r.abs() < 1e-12));
        assert!((ops.mass.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let m = SlitMesh::build(&slit_spec(0.2, 0.05)).unwrap();
        let back = SlitMesh::from_text(&m.to_text()).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.lips, m.lips);
        assert_eq!(back.tip, m.tip);
    }

    #[test]
    fn zero_data_stays_zero() {
        let m = SlitMesh::build(&slit_spec(0.1, 0.02)).unwrap();
        let c = ConstantCoefficients::laplace();
        let n = m.n_dofs();
        let (mut nm, mut st) = Newmark::new(Discretization::new(&m, &c), 0.01, 0.0, vec![0.0; n], vec![0.0; n]).unwrap();
        for _ in 0..10 {
            st = nm.step(&st).unwrap();
        }
        assert!(st.v.iter().chain(&st.w).chain(&st.a).all(|&x| x == 0.0));
    }

    #[test]
    fn lips_do_not_couple() {
        let m = SlitMesh::build(&slit_spec(0.1, 0.01)).unwrap();
        let c = ConstantCoefficients::laplace();
        let k = Discretization::new(&m, &c).assemble(0.0).unwrap().stiffness;
        let lower: std::collections::HashSet<usize> = m.lips.iter().map(|l| l.1).collect();
        for &(a, _) in &m.lips {
            let row = &k.cols[k.row_ptr[a]..k.row_ptr[a + 1]];
            assert!(row.iter().all(|j| !lower.contains(j)), "upper lip vertex {a} couples to the lower lip");
        }
    }

    #[test]
    fn stiffness_quadratic_form() {
        // A = diag(1 − ṡ², 1) with ṡ = 0.6 on the unit slit square.
        let m = SlitMesh::build(&slit_spec(0.1, 0.02)).unwrap();
        let c = ConstantCoefficients { a: [[0.64, 0.0], [0.0, 1.0]], ..ConstantCoefficients::laplace() };
        let k = Discretization::new(&m, &c).assemble(0.0).unwrap().stiffness;
        for (i, want) in [(0, 0.64), (1, 1.0)] {
            let v = m.interpolant(|p, _| p[i]);
            assert!((0.5 * dot(&v, &k.matvec(&v)) - 0.5 * want).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_conserved_without_forcing() {
        let m = SlitMesh::build(&slit_spec(0.1, 0.02)).unwrap();
        let c = ConstantCoefficients::laplace();
        let v0 = m.interpolant(|p, _| (std::f64::consts::PI * p[0]).cos() * (1.0 + p[1]));
        let n = m.n_dofs();
        let (mut nm, mut st) = Newmark::new(Discretization::new(&m, &c), 0.01, 0.0, v0, vec![0.0; n]).unwrap();
        let e0 = nm.energy(&st);
        for _ in 0..50 {
            st = nm.step(&st).unwrap();
        }
        assert!(((nm.energy(&st) - e0) / e0).abs() < 1e-11);
    }
}
