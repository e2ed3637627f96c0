//! Fibre measures: atomic probability measures, signed measures and
//! first-order distributions on a box `X ⊂ R^d` (`d ∈ {1, 2}`), together with
//! push-forwards, Wasserstein-1 distances, dual-norm estimates against test
//! banks and atom-count compaction.
//!
//! Points are stored as `[f64; 2]`; in dimension one the second coordinate is
//! always zero.

mod atoms;
mod bank;
mod compact;
mod transport;

pub use atoms::{AtomicMeasure, FibreMeasure, FirstOrderDistribution, SignedAtomicMeasure};
pub use bank::{standard_bank, FnTest, Linear, Quadratic, TestBank, TestFunction, Trig};
pub use compact::{CompactionMode, Compaction};
pub use transport::{kantorovich_norm_1d, wasserstein1, w1_signed_pair};

use crate::error::{Error, Result};

pub type Point = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

/// Relative slack used when testing box membership of mapped atoms.
const BOX_SLACK: f64 = 1e-12;

/// Axis-aligned fibre box with a base point used to normalize test functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainBox {
    dim: usize,
    lo: Point,
    hi: Point,
    base: Point,
}

impl DomainBox {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("empty interval [{lo}, {hi}]")));
        }
        Ok(Self { dim: 1, lo: [lo, 0.0], hi: [hi, 0.0], base: [0.5 * (lo + hi), 0.0] })
    }

    pub fn rect(lo: Point, hi: Point) -> Result<Self> {
        for c in 0..2 {
            if !(lo[c] < hi[c]) || !lo[c].is_finite() || !hi[c].is_finite() {
                return Err(Error::InvalidArgument(format!("empty box side {c}")));
            }
        }
        let base = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        Ok(Self { dim: 2, lo, hi, base })
    }

    /// Replaces the default base point (the box center).
    pub fn with_base_point(mut self, x0: Point) -> Result<Self> {
        let x0 = if self.dim == 1 { [x0[0], 0.0] } else { x0 };
        if !self.contains(x0) {
            return Err(Error::InvalidArgument("base point outside the box".into()));
        }
        self.base = x0;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn lo(&self) -> Point {
        self.lo
    }
    pub fn hi(&self) -> Point {
        self.hi
    }
    pub fn base_point(&self) -> Point {
        self.base
    }
    pub fn center(&self) -> Point {
        if self.dim == 1 {
            [0.5 * (self.lo[0] + self.hi[0]), 0.0]
        } else {
            [0.5 * (self.lo[0] + self.hi[0]), 0.5 * (self.lo[1] + self.hi[1])]
        }
    }

    pub fn width(&self, c: usize) -> f64 {
        self.hi[c] - self.lo[c]
    }

    pub fn diameter(&self) -> f64 {
        if self.dim == 1 {
            self.width(0)
        } else {
            self.width(0).hypot(self.width(1))
        }
    }

    /// Largest distance from the base point to a point of the box.
    pub fn radius_from_base(&self) -> f64 {
        let r0 = (self.base[0] - self.lo[0]).abs().max((self.hi[0] - self.base[0]).abs());
        if self.dim == 1 {
            r0
        } else {
            let r1 = (self.base[1] - self.lo[1]).abs().max((self.hi[1] - self.base[1]).abs());
            r0.hypot(r1)
        }
    }

    pub fn contains(&self, x: Point) -> bool {
        (0..self.dim).all(|c| {
            let slack = BOX_SLACK * (1.0 + self.width(c));
            x[c] >= self.lo[c] - slack && x[c] <= self.hi[c] + slack
        }) && (self.dim == 2 || x[1] == 0.0)
    }

    pub(crate) fn check(&self, index: usize, x: Point) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::DomainViolation { index, point: x })
        }
    }
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// A smooth self-map of the fibre box with its Jacobian.
pub trait FibreMap: Send + Sync {
    fn apply(&self, x: Point) -> Point;
    fn jacobian(&self, x: Point) -> Mat2;
}

/// `x ↦ A x + b`. In dimension one only `a[0][0]` and `b[0]` matter.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AffineMap {
    pub a: Mat2,
    pub b: Point,
}

impl AffineMap {
    pub fn identity() -> Self {
        Self { a: [[1.0, 0.0], [0.0, 1.0]], b: [0.0, 0.0] }
    }

    /// `x ↦ s x + b`.
    pub fn scaled(s: f64, b: Point) -> Self {
        Self { a: [[s, 0.0], [0.0, s]], b }
    }

    /// One-dimensional `x ↦ s x + b`.
    pub fn line(s: f64, b: f64) -> Self {
        Self { a: [[s, 0.0], [0.0, s]], b: [b, 0.0] }
    }

    /// `self ∘ inner`.
    pub fn after(&self, inner: &AffineMap) -> AffineMap {
        let a = &self.a;
        let c = &inner.a;
        AffineMap {
            a: [
                [a[0][0] * c[0][0] + a[0][1] * c[1][0], a[0][0] * c[0][1] + a[0][1] * c[1][1]],
                [a[1][0] * c[0][0] + a[1][1] * c[1][0], a[1][0] * c[0][1] + a[1][1] * c[1][1]],
            ],
            b: self.apply(inner.b),
        }
    }

    /// Operator norm of the linear part (Lipschitz constant).
    pub fn lipschitz(&self) -> f64 {
        mat_norm(&self.a)
    }
}

impl FibreMap for AffineMap {
    #[inline]
    fn apply(&self, x: Point) -> Point {
        [
            self.a[0][0] * x[0] + self.a[0][1] * x[1] + self.b[0],
            self.a[1][0] * x[0] + self.a[1][1] * x[1] + self.b[1],
        ]
    }

    fn jacobian(&self, _x: Point) -> Mat2 {
        self.a
    }
}

/// Fibre map given by closures, for maps that are not affine.
pub struct FnMap<F, J> {
    pub map: F,
    pub jac: J,
}

impl<F, J> FibreMap for FnMap<F, J>
where
    F: Fn(Point) -> Point + Send + Sync,
    J: Fn(Point) -> Mat2 + Send + Sync,
{
    fn apply(&self, x: Point) -> Point {
        (self.map)(x)
    }
    fn jacobian(&self, x: Point) -> Mat2 {
        (self.jac)(x)
    }
}

pub(crate) fn mat_vec(a: &Mat2, v: Point) -> Point {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

/// Spectral norm of a 2×2 matrix.
pub(crate) fn mat_norm(a: &Mat2) -> f64 {
    let s11 = a[0][0] * a[0][0] + a[1][0] * a[1][0];
    let s22 = a[0][1] * a[0][1] + a[1][1] * a[1][1];
    let s12 = a[0][0] * a[0][1] + a[1][0] * a[1][1];
    let tr = s11 + s22;
    let det = s11 * s22 - s12 * s12;
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr + disc).max(0.0).sqrt()
}
