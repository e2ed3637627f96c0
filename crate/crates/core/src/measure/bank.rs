//! Test functions with certified derivative bounds and finite test banks used
//! to estimate dual `C^k` norms from below.

use std::f64::consts::PI;
use std::sync::Arc;

use super::atoms::FibreMeasure;
use super::{mat_norm, DomainBox, Mat2, Point};
use crate::error::{Error, Result};

/// Smooth test function on the fibre box.
pub trait TestFunction: Send + Sync {
    fn value(&self, x: Point) -> f64;
    fn gradient(&self, x: Point) -> Point;
    fn hessian(&self, x: Point) -> Mat2;
    /// Certified bounds on `sup ‖D^j φ‖` for `j = 1, 2, 3` over the box.
    fn derivative_bounds(&self) -> [f64; 3];

    /// `|φ|_{C^k} = Σ_{j=1..k} ‖D^j φ‖`, from the certified bounds.
    fn seminorm(&self, k: usize) -> f64 {
        self.derivative_bounds().iter().take(k).sum()
    }
}

/// `φ(x) = c · (x − x0)`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub c: Point,
    pub x0: Point,
}

impl TestFunction for Linear {
    fn value(&self, x: Point) -> f64 {
        self.c[0] * (x[0] - self.x0[0]) + self.c[1] * (x[1] - self.x0[1])
    }
    fn gradient(&self, _x: Point) -> Point {
        self.c
    }
    fn hessian(&self, _x: Point) -> Mat2 {
        [[0.0; 2]; 2]
    }
    fn derivative_bounds(&self) -> [f64; 3] {
        [self.c[0].hypot(self.c[1]), 0.0, 0.0]
    }
}

/// `φ(x) = (x − x0)ᵀ Q (x − x0) + c · (x − x0)` with symmetric `Q`; the first
/// derivative bound uses the box radius around `x0`.
#[derive(Clone, Copy, Debug)]
pub struct Quadratic {
    pub q: Mat2,
    pub c: Point,
    pub x0: Point,
    pub radius: f64,
}

impl Quadratic {
    /// `s · (x_coord − x0_coord)²` on `bx`.
    pub fn coordinate_square(bx: &DomainBox, coord: usize, s: f64) -> Self {
        let mut q = [[0.0; 2]; 2];
        q[coord][coord] = s;
        let x0 = bx.base_point();
        let r = (x0[coord] - bx.lo()[coord]).abs().max((bx.hi()[coord] - x0[coord]).abs());
        Self { q, c: [0.0, 0.0], x0, radius: r }
    }

    /// `s · |x − x0|²` on `bx`.
    pub fn norm_square(bx: &DomainBox, s: f64) -> Self {
        let q = if bx.dim() == 1 { [[s, 0.0], [0.0, 0.0]] } else { [[s, 0.0], [0.0, s]] };
        Self { q, c: [0.0, 0.0], x0: bx.base_point(), radius: bx.radius_from_base() }
    }
}

impl TestFunction for Quadratic {
    fn value(&self, x: Point) -> f64 {
        let d = [x[0] - self.x0[0], x[1] - self.x0[1]];
        let q = &self.q;
        d[0] * (q[0][0] * d[0] + q[0][1] * d[1]) + d[1] * (q[1][0] * d[0] + q[1][1] * d[1]) + self.c[0] * d[0] + self.c[1] * d[1]
    }
    fn gradient(&self, x: Point) -> Point {
        let d = [x[0] - self.x0[0], x[1] - self.x0[1]];
        let q = &self.q;
        [
            2.0 * (q[0][0] * d[0] + q[0][1] * d[1]) + self.c[0],
            2.0 * (q[1][0] * d[0] + q[1][1] * d[1]) + self.c[1],
        ]
    }
    fn hessian(&self, _x: Point) -> Mat2 {
        [[2.0 * self.q[0][0], 2.0 * self.q[0][1]], [2.0 * self.q[1][0], 2.0 * self.q[1][1]]]
    }
    fn derivative_bounds(&self) -> [f64; 3] {
        let h = 2.0 * mat_norm(&self.q);
        [h * self.radius + self.c[0].hypot(self.c[1]), h, 0.0]
    }
}

/// `φ(x) = s · (sin(a · (x − x0) + b) − sin b)` (or cosine), so `φ(x0) = 0`.
#[derive(Clone, Copy, Debug)]
pub struct Trig {
    pub a: Point,
    pub b: f64,
    pub s: f64,
    pub cosine: bool,
    pub x0: Point,
}

impl Trig {
    fn phase(&self, x: Point) -> f64 {
        self.a[0] * (x[0] - self.x0[0]) + self.a[1] * (x[1] - self.x0[1]) + self.b
    }
}

impl TestFunction for Trig {
    fn value(&self, x: Point) -> f64 {
        if self.cosine {
            self.s * (self.phase(x).cos() - self.b.cos())
        } else {
            self.s * (self.phase(x).sin() - self.b.sin())
        }
    }
    fn gradient(&self, x: Point) -> Point {
        let d = if self.cosine { -self.phase(x).sin() } else { self.phase(x).cos() };
        [self.s * d * self.a[0], self.s * d * self.a[1]]
    }
    fn hessian(&self, x: Point) -> Mat2 {
        let d = if self.cosine { -self.phase(x).cos() } else { -self.phase(x).sin() };
        let f = self.s * d;
        [[f * self.a[0] * self.a[0], f * self.a[0] * self.a[1]], [f * self.a[1] * self.a[0], f * self.a[1] * self.a[1]]]
    }
    fn derivative_bounds(&self) -> [f64; 3] {
        let n = self.a[0].hypot(self.a[1]);
        [self.s.abs() * n, self.s.abs() * n * n, self.s.abs() * n * n * n]
    }
}

type ValueFn = dyn Fn(Point) -> f64 + Send + Sync;
type GradFn = dyn Fn(Point) -> Point + Send + Sync;
type HessFn = dyn Fn(Point) -> Mat2 + Send + Sync;

/// Test function assembled from closures with caller-supplied bounds.
#[derive(Clone)]
pub struct FnTest {
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
    hessian: Arc<HessFn>,
    bounds: [f64; 3],
}

impl FnTest {
    pub fn new(
        value: impl Fn(Point) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(Point) -> Point + Send + Sync + 'static,
        hessian: impl Fn(Point) -> Mat2 + Send + Sync + 'static,
        bounds: [f64; 3],
    ) -> Self {
        Self { value: Arc::new(value), gradient: Arc::new(gradient), hessian: Arc::new(hessian), bounds }
    }

    /// `φ(x) = x_c`.
    pub fn coordinate(c: usize) -> Self {
        let mut g = [0.0, 0.0];
        g[c] = 1.0;
        Self::new(move |x| x[c], move |_| g, |_| [[0.0; 2]; 2], [1.0, 0.0, 0.0])
    }

    /// `φ(x) = x_c²` on a box of coordinate radius `r` around 0.
    pub fn coordinate_square(c: usize, r: f64) -> Self {
        Self::new(
            move |x| x[c] * x[c],
            move |x| {
                let mut g = [0.0, 0.0];
                g[c] = 2.0 * x[c];
                g
            },
            move |_| {
                let mut h = [[0.0; 2]; 2];
                h[c][c] = 2.0;
                h
            },
            [2.0 * r, 2.0, 0.0],
        )
    }

    /// `φ(x) = |x|²` on a box of radius `r` around 0.
    pub fn norm_square(r: f64) -> Self {
        Self::new(|x| x[0] * x[0] + x[1] * x[1], |x| [2.0 * x[0], 2.0 * x[1]], |_| [[2.0, 0.0], [0.0, 2.0]], [2.0 * r, 2.0, 0.0])
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |_| [0.0, 0.0], |_| [[0.0; 2]; 2], [0.0, 0.0, 0.0])
    }
}

impl TestFunction for FnTest {
    fn value(&self, x: Point) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: Point) -> Point {
        (self.gradient)(x)
    }
    fn hessian(&self, x: Point) -> Mat2 {
        (self.hessian)(x)
    }
    fn derivative_bounds(&self) -> [f64; 3] {
        self.bounds
    }
}

/// Finite family of test functions with certified `|φ|_{C^k} ≤ 1`.
#[derive(Clone)]
pub struct TestBank {
    k: usize,
    members: Vec<Arc<dyn TestFunction>>,
}

impl TestBank {
    /// Rejects members whose certified `C^k` seminorm exceeds one.
    pub fn new(k: usize, members: Vec<Arc<dyn TestFunction>>) -> Result<Self> {
        if !(1..=3).contains(&k) {
            return Err(Error::InvalidArgument(format!("bank order k = {k} not in 1..=3")));
        }
        if let Some(i) = members.iter().position(|m| m.seminorm(k) > 1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("bank member {i} has C^{k} seminorm above one")));
        }
        Ok(Self { k, members })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Arc<dyn TestFunction>] {
        &self.members
    }

    /// Lower bound `max_φ |⟨ξ, φ⟩|` for the dual `C^k` norm of `ξ`, which
    /// must annihilate constants. `k` must match the bank order.
    pub fn dual_norm_estimate<M: FibreMeasure>(&self, xi: &M, k: usize) -> Result<f64> {
        if k != self.k {
            return Err(Error::InvalidArgument(format!("bank certified for k = {}, requested k = {k}", self.k)));
        }
        let mass = xi.mass();
        if mass.abs() > 1e-9 * xi.variation().max(1.0) {
            return Err(Error::InvalidArgument(format!("dual seminorm needs zero total mass, got {mass}")));
        }
        Ok(self.members.iter().map(|phi| xi.pair(phi.as_ref()).abs()).fold(0.0, f64::max))
    }
}

/// Coordinate functions, their squares and a trigonometric family, each scaled
/// to certified `|φ|_{C^k} ≤ 1` and normalized by `φ(x0) = 0` at the box base
/// point. `size` counts members in total.
pub fn standard_bank(bx: &DomainBox, k: usize, size: usize) -> Result<TestBank> {
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidArgument(format!("bank order k = {k} not in 1..=3")));
    }
    if size < 4 {
        return Err(Error::InvalidArgument("bank size must be at least 4".into()));
    }
    let dim = bx.dim();
    let x0 = bx.base_point();
    let mut members: Vec<Arc<dyn TestFunction>> = Vec::new();
    for c in 0..dim {
        let mut e = [0.0, 0.0];
        e[c] = 1.0;
        members.push(Arc::new(Linear { c: e, x0 }));
    }
    for c in 0..dim {
        let q = Quadratic::coordinate_square(bx, c, 1.0);
        let s = 1.0 / q.seminorm(k);
        members.push(Arc::new(Quadratic::coordinate_square(bx, c, s)));
    }
    if dim == 2 {
        let q = Quadratic { q: [[0.0, 0.5], [0.5, 0.0]], c: [0.0, 0.0], x0, radius: bx.radius_from_base() };
        let s = 1.0 / q.seminorm(k);
        members.push(Arc::new(Quadratic { q: [[0.0, 0.5 * s], [0.5 * s, 0.0]], ..q }));
    }
    let directions: Vec<Point> = if dim == 1 {
        vec![[1.0, 0.0]]
    } else {
        (0..8).map(|j| {
            let t = PI * j as f64 / 8.0;
            [t.cos(), t.sin()]
        })
        .collect()
    };
    let base = PI / bx.diameter();
    let mut level = 0;
    'outer: while members.len() < size {
        let f = base * 1.5f64.powi(level / 2) * if level % 2 == 1 { 1.2 } else { 1.0 };
        let scale = 1.0 / (1..=k).map(|j| f.powi(j as i32)).sum::<f64>();
        for d in &directions {
            for (b, cosine) in [(0.0, false), (0.0, true), (PI / 4.0, false), (PI / 4.0, true)] {
                if members.len() >= size {
                    break 'outer;
                }
                members.push(Arc::new(Trig { a: [f * d[0], f * d[1]], b, s: scale, cosine, x0 }));
            }
        }
        level += 1;
    }
    members.truncate(size.max(2 * dim));
    TestBank::new(k, members)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_bounds_dominate_sampled_derivatives() {
        let bx = DomainBox::interval(-1.0, 1.0).unwrap();
        let bank = standard_bank(&bx, 3, 64).unwrap();
        for m in bank.members() {
            let b = m.derivative_bounds();
            for i in 0..=1000 {
                let x = [-1.0 + 2.0 * i as f64 / 1000.0, 0.0];
                assert!(m.gradient(x)[0].abs() <= b[0] + 1e-9);
                assert!(m.hessian(x)[0][0].abs() <= b[1] + 1e-9);
            }
            assert!(m.seminorm(3) <= 1.0 + 1e-12);
            assert!(m.value(bx.base_point()).abs() < 1e-15);
        }
    }
}
