//! Parametrized skew-product families: branch inverses, Perron–Frobenius
//! weights, fibre maps with their derivatives, base densities and contraction
//! certificates.

mod bernoulli;
mod doubling;
mod lsv;
mod solenoid;

pub(crate) use solenoid::solenoid_offset;

use std::sync::Arc;

use serde::Serialize;

pub use bernoulli::{bernoulli_convolution, BernoulliFamily, BernoulliParameter, BernoulliSystem};
pub use doubling::{affine_doubling_test, DoublingFamily, DoublingSystem};
pub use lsv::Lsv;
pub use solenoid::{intermittent_solenoid, SolenoidFamily, SolenoidOptions, SolenoidSystem};

use crate::error::{Error, Result};
use crate::measure::{AffineMap, DomainBox, Point};
use crate::numeric::{trapezoid, Compensated};
use crate::section::OmegaGrid;

/// One inverse branch evaluated at a base point `ω`.
#[derive(Clone, Copy, Debug)]
pub struct BranchEval {
    pub index: usize,
    /// `θ_i(ω)`.
    pub source: f64,
    /// `θ_i'(ω)`.
    pub slope: f64,
    /// `p_i(ω)`.
    pub weight: f64,
    /// Fibre map `g_{θ_i(ω)}`.
    pub map: AffineMap,
}

/// A skew product `T(ω, x) = (f(ω), g(ω, x))` at a fixed parameter, described
/// through the inverse branches of `f`.
pub trait SkewSystem: Send + Sync {
    fn name(&self) -> String;
    /// Value of the parameter the system belongs to.
    fn parameter(&self) -> f64;
    fn base_interval(&self) -> (f64, f64);
    fn fibre_box(&self) -> DomainBox;
    /// Section grid used by the operators.
    fn grid(&self) -> &OmegaGrid;
    fn branch_count(&self) -> usize;

    /// `θ_i(ω)`.
    fn inverse(&self, i: usize, omega: f64) -> f64;
    /// `θ_i'(ω)`.
    fn inverse_slope(&self, i: usize, omega: f64) -> f64;
    /// `∂_α θ_i(ω)` when available.
    fn inverse_dalpha(&self, _i: usize, _omega: f64) -> Option<f64> {
        None
    }

    /// Weights `p_i(ω)`, summing to one.
    fn weights(&self, omega: f64) -> Vec<f64>;

    /// `∂_ω p_i(ω)`, by default a central difference.
    fn weights_domega(&self, omega: f64) -> Vec<f64> {
        let (lo, hi) = self.base_interval();
        let h = 1e-6 * (hi - lo);
        let a = (omega - h).max(lo);
        let b = (omega + h).min(hi);
        let wa = self.weights(a);
        let wb = self.weights(b);
        wa.iter().zip(&wb).map(|(x, y)| (y - x) / (b - a)).collect()
    }

    /// `∂_α p_i(ω)` when available.
    fn weights_dalpha(&self, _omega: f64) -> Option<Vec<f64>> {
        None
    }

    /// Fibre map of branch `i` at the source base point `u = θ_i(ω)`.
    fn fibre_map(&self, i: usize, source: f64) -> AffineMap;
    /// `∂_ω g(u, x)`.
    fn fibre_domega(&self, _i: usize, _source: f64, _x: Point) -> Point {
        [0.0, 0.0]
    }
    /// `∂_α g(u, x)` when available.
    fn fibre_dalpha(&self, _i: usize, _source: f64, _x: Point) -> Option<Point> {
        None
    }

    /// Base map restricted to branch `i`, evaluated at a source point.
    fn forward(&self, i: usize, source: f64) -> f64;

    /// Bounds `[L1, L2, L3]` on `‖D^k g‖` for branch `i`.
    fn derivative_bounds(&self, i: usize) -> [f64; 3];

    fn density(&self) -> &BaseDensity;

    /// True when branches, weights and fibre maps do not depend on `ω`, so that
    /// constant sections are preserved.
    fn constant_sections(&self) -> bool {
        false
    }

    /// Contraction rate used by solvers; defaults to the certificate.
    fn lambda_certificate(&self) -> Result<f64> {
        contraction_certificate(self)
    }

    /// All branches at `ω`.
    fn branches(&self, omega: f64) -> Vec<BranchEval> {
        let w = self.weights(omega);
        (0..self.branch_count())
            .map(|i| {
                let u = self.inverse(i, omega);
                BranchEval { index: i, source: u, slope: self.inverse_slope(i, omega), weight: w[i], map: self.fibre_map(i, u) }
            })
            .collect()
    }
}

/// Which ingredients of a family move with the parameter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Variation {
    pub weights: bool,
    pub branches: bool,
    pub fibre_maps: bool,
    pub base_density: bool,
}

/// `α ↦ T_α` with a fixed branch structure, base interval, fibre box and grid.
pub trait SystemFamily: Send + Sync {
    fn name(&self) -> String;
    /// Open parameter interval.
    fn interval(&self) -> (f64, f64);
    fn system(&self, alpha: f64) -> Result<Arc<dyn SkewSystem>>;
    fn variation(&self) -> Variation;

    /// `ρ̇_α` at the nodes of `grid`: zero when the base density does not move,
    /// a central difference otherwise.
    fn density_derivative(&self, alpha0: f64, eps: f64, grid: &OmegaGrid) -> Result<Vec<f64>> {
        if !self.variation().base_density {
            return Ok(vec![0.0; grid.len()]);
        }
        density_derivative_fd(self, alpha0, eps, grid)
    }
}

/// `max_i max{L1+L2+L3, L1²+3L1L2, L1³}`; errors when the value is `≥ 1`.
pub fn certificate_from_bounds(bounds: &[[f64; 3]]) -> Result<f64> {
    let lam = bounds
        .iter()
        .map(|&[l1, l2, l3]| (l1 + l2 + l3).max(l1 * l1 + 3.0 * l1 * l2).max(l1 * l1 * l1))
        .fold(0.0, f64::max);
    if lam >= 1.0 {
        return Err(Error::NotContracting(lam));
    }
    Ok(lam)
}

/// Contraction certificate of a system from its per-branch derivative bounds.
pub fn contraction_certificate<S: SkewSystem + ?Sized>(sys: &S) -> Result<f64> {
    let bounds: Vec<[f64; 3]> = (0..sys.branch_count()).map(|i| sys.derivative_bounds(i)).collect();
    certificate_from_bounds(&bounds)
}

/// Density `ρ` of the base invariant measure `η = ρ m` on a grid. Near the
/// lower end of the base interval `ρ` may blow up like `(ω − lo)^{−s}`; the
/// exponent `s ∈ [0, 1)` is used for interpolation and end corrections.
#[derive(Clone, Debug, Serialize)]
pub struct BaseDensity {
    grid: OmegaGrid,
    rho: Vec<f64>,
    rho_dot: Option<Vec<f64>>,
    singular_exponent: f64,
}

impl BaseDensity {
    /// Checks non-negativity and `∫ ρ dm = 1` within `1e−8`.
    pub fn new(grid: OmegaGrid, rho: Vec<f64>, singular_exponent: f64) -> Result<Self> {
        if rho.len() != grid.len() {
            return Err(Error::GridMismatch("density values do not match the grid".into()));
        }
        if rho.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidArgument("density must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&singular_exponent) {
            return Err(Error::InvalidArgument("singular exponent must lie in [0, 1)".into()));
        }
        let d = Self { grid, rho, rho_dot: None, singular_exponent };
        let mass = d.total_mass();
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("density integrates to {mass}")));
        }
        Ok(d)
    }

    /// Lebesgue normalized on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let grid = OmegaGrid::uniform(lo, hi, 2)?;
        Self::new(grid, vec![1.0 / (hi - lo); 2], 0.0)
    }

    pub fn with_derivative(mut self, rho_dot: Vec<f64>) -> Result<Self> {
        if rho_dot.len() != self.grid.len() {
            return Err(Error::GridMismatch("density derivative does not match the grid".into()));
        }
        self.rho_dot = Some(rho_dot);
        Ok(self)
    }

    pub fn grid(&self) -> &OmegaGrid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.rho
    }
    pub fn derivative(&self) -> Option<&[f64]> {
        self.rho_dot.as_deref()
    }
    pub fn singular_exponent(&self) -> f64 {
        self.singular_exponent
    }

    fn scale(&self, omega: f64) -> f64 {
        if self.singular_exponent == 0.0 {
            1.0
        } else {
            (omega - self.grid.bounds().0).max(0.0).powf(self.singular_exponent)
        }
    }

    fn interp(&self, values: &[f64], omega: f64) -> f64 {
        let (j, t) = match self.grid.locate(omega) {
            Ok(v) => v,
            Err(_) => return 0.0,
        };
        let n = self.grid.len();
        let nodes = self.grid.nodes();
        if self.singular_exponent == 0.0 {
            return if t == 0.0 || j + 1 >= n { values[j] } else { (1.0 - t) * values[j] + t * values[j + 1] };
        }
        let h = |k: usize| values[k] * self.scale(nodes[k]);
        let hv = if t == 0.0 || j + 1 >= n { h(j) } else { (1.0 - t) * h(j) + t * h(j + 1) };
        let s = self.scale(omega);
        if s > 0.0 {
            hv / s
        } else {
            f64::INFINITY
        }
    }

    /// `ρ(ω)` by linear interpolation of `(ω − lo)^s ρ(ω)`.
    pub fn eval(&self, omega: f64) -> f64 {
        self.interp(&self.rho, omega)
    }

    /// `ρ̇(ω)` when a derivative is attached.
    pub fn eval_derivative(&self, omega: f64) -> Option<f64> {
        self.rho_dot.as_ref().map(|d| self.interp(d, omega))
    }

    pub fn total_mass(&self) -> f64 {
        let ones = vec![1.0; self.grid.len()];
        self.integrate_nodes(&self.grid.clone(), &ones).unwrap_or(f64::NAN)
    }

    /// `∫ f ρ dm` for node values `f_j` on `grid` (trapezoid with end
    /// corrections for a grid that stops short of the interval ends).
    pub fn integrate_nodes(&self, grid: &OmegaGrid, f: &[f64]) -> Result<f64> {
        if f.len() != grid.len() {
            return Err(Error::GridMismatch("integrand does not match the grid".into()));
        }
        let y: Vec<f64> = grid.nodes().iter().zip(f).map(|(w, fv)| fv * self.eval(*w)).collect();
        Ok(singular_quadrature(grid, &y, self.singular_exponent))
    }

    /// `∫ f ρ̇ dm` for node values `f_j` on `grid`.
    pub fn integrate_nodes_derivative(&self, grid: &OmegaGrid, f: &[f64]) -> Result<f64> {
        if self.rho_dot.is_none() {
            return Err(Error::Incomplete("density derivative missing".into()));
        }
        let y: Vec<f64> =
            grid.nodes().iter().zip(f).map(|(w, fv)| fv * self.eval_derivative(*w).unwrap_or(0.0)).collect();
        Ok(singular_quadrature(grid, &y, self.singular_exponent))
    }
}

/// Trapezoid rule on the nodes of `grid` for an integrand behaving like
/// `(ω − lo)^{−s}` near the lower end; the gaps to the interval ends are
/// filled by the power-law integral on the left and a rectangle on the right.
pub fn singular_quadrature(grid: &OmegaGrid, y: &[f64], s: f64) -> f64 {
    let (lo, hi) = grid.bounds();
    let x = grid.nodes();
    let mut acc = Compensated::new();
    acc.add(trapezoid(x, y));
    let n = x.len();
    if x[0] > lo {
        acc.add(y[0] * (x[0] - lo) / (1.0 - s));
    }
    if x[n - 1] < hi {
        acc.add(y[n - 1] * (hi - x[n - 1]));
    }
    acc.value()
}

/// Result of [`ulam_density`].
#[derive(Clone, Debug)]
pub struct UlamResult {
    pub density: BaseDensity,
    /// `max_j |ρ(ω_j) − Σ_i ρ(θ_i(ω_j)) |θ_i'(ω_j)||`.
    pub residual: f64,
    pub iterations: usize,
}

/// Four-point Lagrange weights at `x` on the nodes of `grid` (linear when
/// the grid has fewer than four nodes).
fn lagrange_weights(grid: &OmegaGrid, x: f64) -> Vec<(usize, f64)> {
    let nodes = grid.nodes();
    let n = nodes.len();
    let (j, t) = grid.locate(x).unwrap_or((0, 0.0));
    if n < 4 {
        return if t == 0.0 || j + 1 >= n { vec![(j, 1.0)] } else { vec![(j, 1.0 - t), (j + 1, t)] };
    }
    let k = j.saturating_sub(1).min(n - 4);
    let xs = &nodes[k..k + 4];
    (0..4)
        .map(|a| {
            let mut l = 1.0;
            for b in 0..4 {
                if b != a {
                    l *= (x - xs[b]) / (xs[a] - xs[b]);
                }
            }
            (k + a, l)
        })
        .collect()
}

/// Invariant density of a uniformly expanding full-branch base map by
/// iterating the Perron–Frobenius operator on grid values (four-point
/// Lagrange interpolation between nodes, renormalized every step).
///
/// `branches(ω)` lists `(θ_i(ω), |θ_i'(ω)|)` for every inverse branch.
pub fn ulam_density(
    grid: &OmegaGrid,
    branches: &(dyn Fn(f64) -> Vec<(f64, f64)> + Sync),
    max_iter: usize,
    tol: f64,
) -> Result<UlamResult> {
    use rayon::prelude::*;
    let (lo, hi) = grid.bounds();
    let table: Vec<Vec<(usize, f64)>> = grid
        .nodes()
        .par_iter()
        .map(|&w| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for (u, s) in branches(w) {
                for (k, l) in lagrange_weights(grid, u.clamp(lo, hi)) {
                    row.push((k, l * s));
                }
            }
            row
        })
        .collect();
    let apply = |rho: &[f64]| -> Vec<f64> {
        table
            .iter()
            .map(|row| {
                let mut acc = Compensated::new();
                for &(k, c) in row {
                    acc.add(rho[k] * c);
                }
                acc.value()
            })
            .collect()
    };
    let normalize = |rho: &mut Vec<f64>| {
        let m = singular_quadrature(grid, rho, 0.0);
        rho.iter_mut().for_each(|r| *r /= m);
    };
    let mut rho = vec![1.0 / (hi - lo); grid.len()];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let mut next = apply(&rho);
        normalize(&mut next);
        let image = apply(&next);
        residual = next.iter().zip(&image).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rho = next;
        if residual <= tol {
            let density = BaseDensity::new(grid.clone(), rho, 0.0)?;
            return Ok(UlamResult { density, residual, iterations: it });
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, distance: residual })
}

/// Central difference `(ρ_{α0+ε} − ρ_{α0−ε}) / 2ε` at the nodes of `grid`.
pub fn density_derivative_fd<F: SystemFamily + ?Sized>(family: &F, alpha0: f64, eps: f64, grid: &OmegaGrid) -> Result<Vec<f64>> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let (a, b) = family.interval();
    if alpha0 - eps <= a || alpha0 + eps >= b {
        return Err(Error::InvalidArgument("finite-difference stencil leaves the parameter interval".into()));
    }
    let plus = family.system(alpha0 + eps)?;
    let minus = family.system(alpha0 - eps)?;
    Ok(grid
        .nodes()
        .iter()
        .map(|&w| (plus.density().eval(w) - minus.density().eval(w)) / (2.0 * eps))
        .collect())
}

/// A system whose parameter dependence is switched off: every parameter
/// derivative reports zero.
pub struct Frozen(pub Arc<dyn SkewSystem>);

impl SkewSystem for Frozen {
    fn name(&self) -> String {
        format!("frozen {}", self.0.name())
    }
    fn parameter(&self) -> f64 {
        self.0.parameter()
    }
    fn base_interval(&self) -> (f64, f64) {
        self.0.base_interval()
    }
    fn fibre_box(&self) -> DomainBox {
        self.0.fibre_box()
    }
    fn grid(&self) -> &OmegaGrid {
        self.0.grid()
    }
    fn branch_count(&self) -> usize {
        self.0.branch_count()
    }
    fn inverse(&self, i: usize, omega: f64) -> f64 {
        self.0.inverse(i, omega)
    }
    fn inverse_slope(&self, i: usize, omega: f64) -> f64 {
        self.0.inverse_slope(i, omega)
    }
    fn inverse_dalpha(&self, _i: usize, _omega: f64) -> Option<f64> {
        Some(0.0)
    }
    fn weights(&self, omega: f64) -> Vec<f64> {
        self.0.weights(omega)
    }
    fn weights_domega(&self, omega: f64) -> Vec<f64> {
        self.0.weights_domega(omega)
    }
    fn weights_dalpha(&self, _omega: f64) -> Option<Vec<f64>> {
        Some(vec![0.0; self.0.branch_count()])
    }
    fn fibre_map(&self, i: usize, source: f64) -> AffineMap {
        self.0.fibre_map(i, source)
    }
    fn fibre_domega(&self, i: usize, source: f64, x: Point) -> Point {
        self.0.fibre_domega(i, source, x)
    }
    fn fibre_dalpha(&self, _i: usize, _source: f64, _x: Point) -> Option<Point> {
        Some([0.0, 0.0])
    }
    fn forward(&self, i: usize, source: f64) -> f64 {
        self.0.forward(i, source)
    }
    fn derivative_bounds(&self, i: usize) -> [f64; 3] {
        self.0.derivative_bounds(i)
    }
    fn density(&self) -> &BaseDensity {
        self.0.density()
    }
    fn constant_sections(&self) -> bool {
        self.0.constant_sections()
    }
    fn lambda_certificate(&self) -> Result<f64> {
        self.0.lambda_certificate()
    }
    fn branches(&self, omega: f64) -> Vec<BranchEval> {
        self.0.branches(omega)
    }
}

/// Family returning the same (frozen) system for every parameter value.
pub struct ConstantFamily {
    system: Arc<dyn SkewSystem>,
}

impl ConstantFamily {
    pub fn new(system: Arc<dyn SkewSystem>) -> Self {
        Self { system: Arc::new(Frozen(system)) }
    }
}

impl SystemFamily for ConstantFamily {
    fn name(&self) -> String {
        self.system.name()
    }
    fn interval(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
    fn system(&self, _alpha: f64) -> Result<Arc<dyn SkewSystem>> {
        Ok(self.system.clone())
    }
    fn variation(&self) -> Variation {
        Variation::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certificate_examples() {
        assert!((certificate_from_bounds(&[[0.4, 0.0, 0.0]]).unwrap() - 0.4).abs() < 1e-15);
        assert!((certificate_from_bounds(&[[0.5, 0.3, 0.1]]).unwrap() - 0.9).abs() < 1e-15);
        assert!(matches!(certificate_from_bounds(&[[0.9, 0.2, 0.0]]), Err(Error::NotContracting(_))));
    }

    #[test]
    fn singular_quadrature_integrates_power_law() {
        let s = 0.5;
        let g = OmegaGrid::graded(0.0, 1.0, 2049, 1e-8, 1.05).unwrap();
        let y: Vec<f64> = g.nodes().iter().map(|w| 0.5 * w.powf(-s)).collect();
        let v = singular_quadrature(&g, &y, s);
        assert!((v - 1.0).abs() < 1e-4, "{v}");
    }
}
