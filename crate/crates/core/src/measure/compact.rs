//! Atom-count reduction with transport error bounds.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use super::transport::w1_raw_1d;
use super::{distance, DomainBox, Point};

/// How a measure is reduced to a fixed number of atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompactionMode {
    /// Greedy fusion of nearby atoms at their weighted centroid.
    Merge,
    /// One-dimensional probability measures only: `N` equal-weight atoms,
    /// the j-th at the barycenter of the j-th quantile band.
    Quantile,
    /// Fixed cells over the fibre box. Probability measures keep one atom per
    /// occupied cell at the weighted centroid; signed and first-order
    /// distributions are spread onto the cell lattice with quadratic Lagrange
    /// weights, which reproduce every polynomial of degree two per coordinate.
    Grid,
}

impl CompactionMode {
    pub fn name(&self) -> &'static str {
        match self {
            CompactionMode::Merge => "merge",
            CompactionMode::Quantile => "quantile",
            CompactionMode::Grid => "grid",
        }
    }
}

/// Budget and mode used by the operators; `mode = None` selects the default
/// mode of the measure kind.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Compaction {
    pub budget: usize,
    pub mode: Option<CompactionMode>,
}

impl Compaction {
    pub fn new(budget: usize) -> Self {
        Self { budget, mode: None }
    }

    pub fn with_mode(mut self, mode: CompactionMode) -> Self {
        self.mode = Some(mode);
        self
    }

    /// Default budgets: 256 atoms on a 1D fibre, 1024 on a 2D fibre.
    pub fn default_for(dim: usize) -> Self {
        Self::new(if dim == 1 { 256 } else { 1024 })
    }
}

type Compacted = (Vec<Point>, Vec<f64>, Option<Vec<Point>>, f64);

pub(crate) fn quantile_1d(points: &[Point], w: &[f64], n: usize) -> (Vec<Point>, Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(a.cmp(&b)));
    let total: f64 = crate::numeric::csum(w.iter().copied());
    let band = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut filled = 0.0;
    let mut moment = 0.0;
    for &i in &idx {
        let x = points[i][0];
        let mut rest = w[i];
        while rest > 0.0 {
            let room = band - filled;
            if rest < room || out.len() == n - 1 {
                filled += rest;
                moment += rest * x;
                rest = 0.0;
            } else {
                moment += room * x;
                rest -= room;
                out.push(moment / band);
                filled = 0.0;
                moment = 0.0;
            }
        }
    }
    if out.len() < n {
        out.push(if filled > 0.0 { moment / filled } else { out.last().copied().unwrap_or(0.0) });
    }
    let pts: Vec<Point> = out.iter().map(|&x| [x, 0.0]).collect();
    let weights = vec![band; n];
    let bound = w1_raw_1d(points, w, &pts, &weights);
    (pts, weights, bound)
}

#[derive(PartialEq)]
struct Candidate {
    cost: f64,
    left: usize,
    stamp: (u32, u32),
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // min-heap on cost, ties broken by position for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then(other.left.cmp(&self.left))
    }
}

fn centroid(xa: Point, wa: f64, xb: Point, wb: f64) -> Point {
    let (a, b) = (wa.abs(), wb.abs());
    if a + b == 0.0 {
        return [0.5 * (xa[0] + xb[0]), 0.5 * (xa[1] + xb[1])];
    }
    [(a * xa[0] + b * xb[0]) / (a + b), (a * xa[1] + b * xb[1]) / (a + b)]
}

fn merge_cost(xa: Point, wa: f64, va: Point, xb: Point, wb: f64, vb: Point) -> f64 {
    let c = centroid(xa, wa, xb, wb);
    (wa.abs() + va[0].hypot(va[1])) * distance(xa, c) + (wb.abs() + vb[0].hypot(vb[1])) * distance(xb, c)
}

pub(crate) fn merge(
    dim: usize,
    points: &[Point],
    w: &[f64],
    v: Option<&[Point]>,
    n: usize,
    bx: &DomainBox,
) -> Compacted {
    if dim == 1 {
        merge_1d(points, w, v, n)
    } else {
        merge_cells(points, w, v, n, bx)
    }
}

fn merge_1d(points: &[Point], w: &[f64], v: Option<&[Point]>, n: usize) -> Compacted {
    let len = w.len();
    let mut idx: Vec<usize> = (0..len).collect();
    idx.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(a.cmp(&b)));
    let mut x: Vec<Point> = idx.iter().map(|&i| points[i]).collect();
    let mut wt: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
    let mut vt: Vec<Point> = match v {
        Some(v) => idx.iter().map(|&i| v[i]).collect(),
        None => vec![[0.0, 0.0]; len],
    };
    let mut next: Vec<usize> = (1..=len).collect();
    let mut prev: Vec<usize> = (0..len).map(|i| i.wrapping_sub(1)).collect();
    let mut alive = vec![true; len];
    let mut version = vec![0u32; len];
    let mut heap = BinaryHeap::new();
    for i in 0..len.saturating_sub(1) {
        heap.push(Candidate { cost: merge_cost(x[i], wt[i], vt[i], x[i + 1], wt[i + 1], vt[i + 1]), left: i, stamp: (0, 0) });
    }
    let mut count = len;
    let mut bound = 0.0;
    while count > n {
        let Some(c) = heap.pop() else { break };
        let a = c.left;
        if !alive[a] {
            continue;
        }
        let b = next[a];
        if b >= len || c.stamp != (version[a], version[b]) {
            continue;
        }
        bound += c.cost;
        let cx = centroid(x[a], wt[a], x[b], wt[b]);
        x[a] = cx;
        wt[a] += wt[b];
        vt[a] = [vt[a][0] + vt[b][0], vt[a][1] + vt[b][1]];
        alive[b] = false;
        next[a] = next[b];
        if next[b] < len {
            prev[next[b]] = a;
        }
        version[a] += 1;
        count -= 1;
        let p = prev[a];
        if p < len {
            heap.push(Candidate {
                cost: merge_cost(x[p], wt[p], vt[p], x[a], wt[a], vt[a]),
                left: p,
                stamp: (version[p], version[a]),
            });
        }
        let q = next[a];
        if q < len {
            heap.push(Candidate {
                cost: merge_cost(x[a], wt[a], vt[a], x[q], wt[q], vt[q]),
                left: a,
                stamp: (version[a], version[q]),
            });
        }
    }
    let keep: Vec<usize> = (0..len).filter(|&i| alive[i]).collect();
    let out_v = v.map(|_| keep.iter().map(|&i| vt[i]).collect());
    (keep.iter().map(|&i| x[i]).collect(), keep.iter().map(|&i| wt[i]).collect(), out_v, bound)
}

fn merge_cells(points: &[Point], w: &[f64], v: Option<&[Point]>, n: usize, bx: &DomainBox) -> Compacted {
    let lo = bx.lo();
    let mut delta = bx.diameter() / (2.0 * (n as f64).sqrt());
    loop {
        let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, x) in points.iter().enumerate() {
            let key = (((x[0] - lo[0]) / delta).floor() as i64, ((x[1] - lo[1]) / delta).floor() as i64);
            cells.entry(key).or_default().push(i);
        }
        if cells.len() <= n {
            let mut out_p = Vec::with_capacity(cells.len());
            let mut out_w = Vec::with_capacity(cells.len());
            let mut out_v = Vec::with_capacity(cells.len());
            let mut bound = 0.0;
            for members in cells.values() {
                let a: f64 = members.iter().map(|&i| w[i].abs()).sum();
                let c = if a > 0.0 {
                    let sx: f64 = members.iter().map(|&i| w[i].abs() * points[i][0]).sum();
                    let sy: f64 = members.iter().map(|&i| w[i].abs() * points[i][1]).sum();
                    [sx / a, sy / a]
                } else {
                    points[members[0]]
                };
                let mut ws = 0.0;
                let mut vs = [0.0, 0.0];
                for &i in members {
                    ws += w[i];
                    let vi = v.map(|v| v[i]).unwrap_or([0.0, 0.0]);
                    vs[0] += vi[0];
                    vs[1] += vi[1];
                    bound += (w[i].abs() + vi[0].hypot(vi[1])) * distance(points[i], c);
                }
                out_p.push(c);
                out_w.push(ws);
                out_v.push(vs);
            }
            return (out_p, out_w, v.map(|_| out_v), bound);
        }
        delta *= 1.25;
    }
}

struct Lattice {
    dim: usize,
    m: usize,
    lo: Point,
    hi: Point,
}

impl Lattice {
    fn new(dim: usize, budget: usize, bx: &DomainBox) -> Self {
        let m = if dim == 1 { budget } else { (budget as f64).sqrt().floor() as usize };
        Self { dim, m, lo: bx.lo(), hi: bx.hi() }
    }

    fn coord(&self, c: usize, k: usize) -> f64 {
        self.lo[c] + (self.hi[c] - self.lo[c]) * (k as f64) / ((self.m - 1) as f64)
    }

    fn step(&self, c: usize) -> f64 {
        (self.hi[c] - self.lo[c]) / ((self.m - 1) as f64)
    }

    /// Fractional lattice position of coordinate `c`, clamped to the box.
    fn position(&self, c: usize, x: f64) -> f64 {
        ((x - self.lo[c]) / self.step(c)).clamp(0.0, (self.m - 1) as f64)
    }

    fn size(&self) -> usize {
        if self.dim == 1 {
            self.m
        } else {
            self.m * self.m
        }
    }

    fn node(&self, flat: usize) -> Point {
        if self.dim == 1 {
            [self.coord(0, flat), 0.0]
        } else {
            [self.coord(0, flat / self.m), self.coord(1, flat % self.m)]
        }
    }
}

const SNAP: f64 = 1e-12;

/// Quadratic Lagrange stencil along one axis:
/// (first node, weights, Σ|l|, Σ|l|·|offset| · step).
fn quadratic_stencil(lat: &Lattice, c: usize, x: f64) -> (usize, [f64; 3], f64, f64) {
    let u = lat.position(c, x);
    let k = (u.round() as usize).clamp(1, lat.m - 2);
    let mut s = u - k as f64;
    if s.abs() < SNAP {
        s = 0.0;
    }
    let l = [0.5 * (s * s - s), 1.0 - s * s, 0.5 * (s * s + s)];
    let abs_sum = l.iter().map(|x| x.abs()).sum();
    let moved = (l[0].abs() * (s + 1.0).abs() + l[1].abs() * s.abs() + l[2].abs() * (s - 1.0).abs()) * lat.step(c);
    (k - 1, l, abs_sum, moved)
}

fn collect_nodes(lat: &Lattice, acc: &[f64], accv: Option<&[Point]>) -> (Vec<Point>, Vec<f64>, Option<Vec<Point>>) {
    let mut p = Vec::new();
    let mut w = Vec::new();
    let mut v = Vec::new();
    for f in 0..lat.size() {
        let vf = accv.map(|a| a[f]).unwrap_or([0.0, 0.0]);
        if acc[f] != 0.0 || vf[0] != 0.0 || vf[1] != 0.0 {
            p.push(lat.node(f));
            w.push(acc[f]);
            v.push(vf);
        }
    }
    (p, w, accv.map(|_| v))
}

/// Bins atoms onto `⌊√N⌋²` cells (`N` cells in 1D) over the box and replaces
/// each occupied cell by one atom at the weighted centroid of its members.
pub(crate) fn grid_centroid(dim: usize, points: &[Point], w: &[f64], budget: usize, bx: &DomainBox) -> (Vec<Point>, Vec<f64>, f64) {
    let m = if dim == 1 { budget } else { (budget as f64).sqrt().floor() as usize }.max(1);
    let (lo, hi) = (bx.lo(), bx.hi());
    let cell = |c: usize, x: f64| -> usize {
        let width = hi[c] - lo[c];
        if width <= 0.0 {
            return 0;
        }
        (((x - lo[c]) / width * m as f64).floor().max(0.0) as usize).min(m - 1)
    };
    let size = if dim == 1 { m } else { m * m };
    let mut mass = vec![0.0; size];
    let mut moment = vec![[0.0, 0.0]; size];
    let mut owner = vec![usize::MAX; points.len()];
    for (i, (x, &wi)) in points.iter().zip(w).enumerate() {
        let f = if dim == 1 { cell(0, x[0]) } else { cell(0, x[0]) * m + cell(1, x[1]) };
        owner[i] = f;
        mass[f] += wi;
        moment[f][0] += wi * x[0];
        moment[f][1] += wi * x[1];
    }
    let mut index = vec![usize::MAX; size];
    let mut out_p = Vec::new();
    let mut out_w = Vec::new();
    for f in 0..size {
        if mass[f] > 0.0 {
            index[f] = out_p.len();
            let c = if dim == 1 { [moment[f][0] / mass[f], 0.0] } else { [moment[f][0] / mass[f], moment[f][1] / mass[f]] };
            out_p.push(c);
            out_w.push(mass[f]);
        }
    }
    let mut bound = 0.0;
    for (i, (x, &wi)) in points.iter().zip(w).enumerate() {
        let k = index[owner[i]];
        if k != usize::MAX {
            bound += wi * distance(*x, out_p[k]);
        }
    }
    (out_p, out_w, bound)
}

pub(crate) fn grid_quadratic(
    dim: usize,
    points: &[Point],
    w: &[f64],
    v: Option<&[Point]>,
    budget: usize,
    bx: &DomainBox,
) -> Compacted {
    let lat = Lattice::new(dim, budget, bx);
    if lat.m < 3 {
        return merge(dim, points, w, v, budget, bx);
    }
    let mut acc = vec![0.0; lat.size()];
    let mut accv = vec![[0.0, 0.0]; lat.size()];
    let mut bound = 0.0;
    for i in 0..w.len() {
        let x = points[i];
        let wi = w[i];
        let vi = v.map(|v| v[i]).unwrap_or([0.0, 0.0]);
        let scale = wi.abs() + vi[0].hypot(vi[1]);
        let (k0, l0, a0, d0) = quadratic_stencil(&lat, 0, x[0]);
        if dim == 1 {
            for a in 0..3 {
                acc[k0 + a] += wi * l0[a];
                accv[k0 + a][0] += vi[0] * l0[a];
            }
            bound += scale * d0;
        } else {
            let (k1, l1, a1, d1) = quadratic_stencil(&lat, 1, x[1]);
            for a in 0..3 {
                for b in 0..3 {
                    let l = l0[a] * l1[b];
                    let f = (k0 + a) * lat.m + k1 + b;
                    acc[f] += wi * l;
                    accv[f][0] += vi[0] * l;
                    accv[f][1] += vi[1] * l;
                }
            }
            bound += scale * (d0 * a1 + a0 * d1);
        }
    }
    let (p, w, vout) = collect_nodes(&lat, &acc, v.map(|_| accv.as_slice()));
    (p, w, vout, bound)
}
