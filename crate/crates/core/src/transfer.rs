//! The sectional transfer operator, its powers, the fixed-point solver and
//! the duality check `⟨⟨Kν, Φ⟩⟩ = ⟨⟨ν, Φ∘T⟩⟩`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{AffineMap, AtomicMeasure, Compaction, CompactionMode, FibreMap, FibreMeasure, Point, TestFunction};
use crate::numeric::Compensated;
use crate::observable::Observable;
use crate::section::{sup_metric, ConvergenceReport, OmegaGrid, Section};
use crate::systems::{singular_quadrature, SkewSystem};

/// Worst-case bookkeeping of one operator application over all nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct OperatorDiagnostics {
    pub atoms_before: usize,
    pub atoms_after: usize,
    /// Largest mass drift removed after compaction.
    pub mass_drift: f64,
    /// Largest number of (branch, interpolation node) terms at a node.
    pub branch_terms: usize,
    /// Largest compaction error bound.
    pub compaction_bound: f64,
}

impl OperatorDiagnostics {
    fn merge(self, o: Self) -> Self {
        Self {
            atoms_before: self.atoms_before.max(o.atoms_before),
            atoms_after: self.atoms_after.max(o.atoms_after),
            mass_drift: self.mass_drift.max(o.mass_drift),
            branch_terms: self.branch_terms.max(o.branch_terms),
            compaction_bound: self.compaction_bound.max(o.compaction_bound),
        }
    }
}

fn check_base<S: SkewSystem + ?Sized>(sys: &S, grid: &OmegaGrid) -> Result<()> {
    if grid.bounds() != sys.base_interval() {
        return Err(Error::GridMismatch(format!(
            "section grid on {:?} but base interval {:?}",
            grid.bounds(),
            sys.base_interval()
        )));
    }
    Ok(())
}

/// `(Kσ)_ω` at a single base point, before compaction.
pub fn apply_k_at<M: FibreMeasure, S: SkewSystem + ?Sized>(sys: &S, sigma: &Section<M>, omega: f64) -> Result<(M, usize)> {
    let branches = sys.branches(omega);
    let mut pieces: Vec<(f64, usize, AffineMap)> = Vec::new();
    for b in &branches {
        if b.weight == 0.0 {
            continue;
        }
        for (k, c) in sigma.interpolation_weights(b.source)? {
            pieces.push((b.weight * c, k, b.map));
        }
    }
    let terms: Vec<(f64, &M, &dyn FibreMap)> =
        pieces.iter().map(|(c, k, map)| (*c, &sigma.stored()[*k], map as &dyn FibreMap)).collect();
    let n = terms.len();
    Ok((M::push_combine(sigma.dim(), &terms, &sys.fibre_box())?, n))
}

fn finish<M: FibreMeasure, S: SkewSystem + ?Sized>(
    sys: &S,
    raw: M,
    terms: usize,
    compaction: &Compaction,
) -> Result<(M, OperatorDiagnostics)> {
    let before = raw.len();
    let mode = compaction.mode.unwrap_or_else(|| M::default_mode(raw.dim()));
    // 2D grid binning runs at every step so that each iteration applies the same map.
    let (mut out, bound) = if raw.len() > compaction.budget || (raw.dim() == 2 && mode == CompactionMode::Grid) {
        raw.compact(compaction.budget, mode, &sys.fibre_box())?
    } else {
        (raw, 0.0)
    };
    let drift = out.restore_mass();
    let diag = OperatorDiagnostics {
        atoms_before: before,
        atoms_after: out.len(),
        mass_drift: drift.abs(),
        branch_terms: terms,
        compaction_bound: bound,
    };
    Ok((out, diag))
}

/// One application of the sectional transfer operator
/// `(Kσ)_ω = Σ_i p_i(ω) (g_{θ_i(ω)})_* σ_{θ_i(ω)}`, compacted node-wise.
/// Constant sections of systems with `ω`-independent branches stay constant.
pub fn apply_k<M: FibreMeasure, S: SkewSystem + ?Sized>(
    sys: &S,
    sigma: &Section<M>,
    compaction: &Compaction,
) -> Result<(Section<M>, OperatorDiagnostics)> {
    check_base(sys, sigma.grid())?;
    if compaction.budget < sys.branch_count() {
        return Err(Error::Capacity { size: sys.branch_count(), capacity: compaction.budget });
    }
    let grid = sigma.grid();
    if sigma.is_constant() && sys.constant_sections() {
        let (lo, hi) = grid.bounds();
        let (raw, terms) = apply_k_at(sys, sigma, 0.5 * (lo + hi))?;
        let (out, diag) = finish(sys, raw, terms, compaction)?;
        return Ok((Section::constant(grid.clone(), out), diag));
    }
    let results: Vec<(M, OperatorDiagnostics)> = grid
        .nodes()
        .par_iter()
        .map(|&w| {
            let (raw, terms) = apply_k_at(sys, sigma, w)?;
            finish(sys, raw, terms, compaction)
        })
        .collect::<Result<_>>()?;
    let mut diag = OperatorDiagnostics::default();
    let mut values = Vec::with_capacity(results.len());
    for (m, d) in results {
        diag = diag.merge(d);
        values.push(m);
    }
    Ok((Section::new(grid.clone(), values)?, diag))
}

/// `K^k σ` as `k` successive applications.
pub fn apply_k_power<M: FibreMeasure, S: SkewSystem + ?Sized>(
    sys: &S,
    sigma: &Section<M>,
    k: usize,
    compaction: &Compaction,
) -> Result<(Section<M>, OperatorDiagnostics)> {
    let mut cur = sigma.clone();
    let mut diag = OperatorDiagnostics::default();
    for _ in 0..k {
        let (next, d) = apply_k(sys, &cur, compaction)?;
        diag = diag.merge(d);
        cur = next;
    }
    Ok((cur, diag))
}

/// Settings of [`fixed_point`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointOptions {
    /// Tolerance on the a-posteriori bound `λ d_n / (1 − λ)`.
    pub tol: f64,
    pub max_iter: usize,
    pub compaction: Compaction,
}

impl FixedPointOptions {
    pub fn new(tol: f64, max_iter: usize, compaction: Compaction) -> Self {
        Self { tol, max_iter, compaction }
    }
}

#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub section: Section<AtomicMeasure>,
    pub report: ConvergenceReport,
    /// Contraction rate used in the stopping rule.
    pub lambda: f64,
    pub diagnostics: OperatorDiagnostics,
}

/// Constant Dirac section at the fibre base point on the system grid.
pub fn default_initial_section<S: SkewSystem + ?Sized>(sys: &S) -> Section<AtomicMeasure> {
    let bx = sys.fibre_box();
    Section::constant(sys.grid().clone(), AtomicMeasure::dirac(bx.dim(), bx.base_point()))
}

/// Banach iteration `σ_{n+1} = Kσ_n` until `λ d_n/(1 − λ) ≤ tol` with
/// `d_n = sup_metric(σ_{n+1}, σ_n)`.
pub fn fixed_point<S: SkewSystem + ?Sized>(
    sys: &S,
    options: &FixedPointOptions,
    init: Option<Section<AtomicMeasure>>,
) -> Result<FixedPoint> {
    let lambda = sys.lambda_certificate()?;
    let mut cur = init.unwrap_or_else(|| default_initial_section(sys));
    let mut distances = Vec::new();
    let mut diag = OperatorDiagnostics::default();
    for _ in 0..options.max_iter {
        let (next, d) = apply_k(sys, &cur, &options.compaction)?;
        diag = diag.merge(d);
        let dist = sup_metric(&next, &cur)?;
        distances.push(dist);
        cur = next;
        if lambda * dist / (1.0 - lambda) <= options.tol {
            let report = ConvergenceReport::from_distances(distances, true);
            return Ok(FixedPoint { section: cur, report, lambda, diagnostics: diag });
        }
    }
    Err(Error::NoConvergence { iterations: options.max_iter, distance: distances.last().copied().unwrap_or(f64::NAN) })
}

/// Both sides of the duality identity and their difference.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DualityResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub quadrature_nodes: usize,
}

struct Composed<'a> {
    observable: Observable,
    omega: f64,
    map: &'a AffineMap,
}

impl TestFunction for Composed<'_> {
    fn value(&self, x: Point) -> f64 {
        self.observable.value(self.omega, self.map.apply(x))
    }
    fn gradient(&self, x: Point) -> Point {
        let g = self.observable.gradient(self.omega, self.map.apply(x));
        let a = &self.map.a;
        [g[0] * a[0][0] + g[1] * a[1][0], g[0] * a[0][1] + g[1] * a[1][1]]
    }
    fn hessian(&self, _x: Point) -> crate::measure::Mat2 {
        [[0.0; 2]; 2]
    }
    fn derivative_bounds(&self) -> [f64; 3] {
        [f64::INFINITY; 3]
    }
}

/// Quadrature grid with `m` nodes: graded towards the lower end when the
/// base density is singular there, uniform otherwise.
pub fn quadrature_grid<S: SkewSystem + ?Sized>(sys: &S, m: usize) -> Result<OmegaGrid> {
    let (lo, hi) = sys.base_interval();
    let d = sys.density();
    if d.singular_exponent() > 0.0 {
        let start = d.grid().nodes()[0];
        OmegaGrid::graded(lo, hi, m, start, 1.1)
    } else {
        OmegaGrid::uniform(lo, hi, m)
    }
}

/// `|∫ ρ ⟨(Kσ)_ω, Φ(ω, ·)⟩ dω − ∫ ρ ⟨σ_u, Φ(f(u), g(u, ·))⟩ du|`.
///
/// The left side uses the exact (uncompacted) operator at the nodes of
/// `quadrature`. The right side is integrated branch by branch over the
/// branch images in the source variable `u`, on the nodes `θ_i(ω_q)`, with
/// the forward map `f`.
pub fn duality_residual<S: SkewSystem + ?Sized>(
    sys: &S,
    sigma: &Section<AtomicMeasure>,
    observable: Observable,
    quadrature: &OmegaGrid,
) -> Result<DualityResidual> {
    check_base(sys, sigma.grid())?;
    check_base(sys, quadrature)?;
    let density = sys.density();
    let nodes = quadrature.nodes();
    let lhs_vals: Vec<f64> = nodes
        .par_iter()
        .map(|&w| {
            let mut acc = Compensated::new();
            for b in sys.branches(w) {
                if b.weight == 0.0 {
                    continue;
                }
                let phi = Composed { observable, omega: w, map: &b.map };
                for (k, c) in sigma.interpolation_weights(b.source)? {
                    acc.add(b.weight * c * sigma.stored()[k].pair(&phi));
                }
            }
            Ok(acc.value())
        })
        .collect::<Result<_>>()?;
    let lhs = density.integrate_nodes(quadrature, &lhs_vals)?;

    let (lo, _) = sys.base_interval();
    let mut rhs = Compensated::new();
    for i in 0..sys.branch_count() {
        let mut u: Vec<f64> = nodes.iter().map(|&w| sys.inverse(i, w)).collect();
        u.sort_by(f64::total_cmp);
        u.dedup();
        let a = sys.inverse(i, quadrature.bounds().0);
        let b = sys.inverse(i, quadrature.bounds().1);
        let (ulo, uhi) = (a.min(b), a.max(b));
        let ugrid = OmegaGrid::from_nodes(ulo, uhi, u)?;
        let vals: Vec<f64> = ugrid
            .nodes()
            .par_iter()
            .map(|&uu| {
                let target = sys.forward(i, uu);
                let map = sys.fibre_map(i, uu);
                let phi = Composed { observable, omega: target, map: &map };
                let mut acc = Compensated::new();
                for (k, c) in sigma.interpolation_weights(uu)? {
                    acc.add(c * sigma.stored()[k].pair(&phi));
                }
                Ok(acc.value() * density.eval(uu))
            })
            .collect::<Result<_>>()?;
        let s = if ulo == lo { density.singular_exponent() } else { 0.0 };
        rhs.add(singular_quadrature(&ugrid, &vals, s));
    }
    let rhs = rhs.value();
    Ok(DualityResidual { lhs, rhs, residual: (lhs - rhs).abs(), quadrature_nodes: nodes.len() })
}
