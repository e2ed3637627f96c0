//! The sectional unfolding operator `𝒰`, which rebuilds a section over
//! `Ω = [0, 1]` from one over `Ω̄ = [½, 1]`, and numerical checks of the
//! induced-operator identity and of the unfolded fixed point.

use rayon::prelude::*;
use serde::Serialize;

use super::density::tail_derivative_sum;
use super::induced::InducedSystem;
use crate::error::{Error, Result};
use crate::measure::{
    wasserstein1, AffineMap, AtomicMeasure, Compaction, CompactionMode, DomainBox, FibreMap, FibreMeasure,
    SignedAtomicMeasure,
};
use crate::section::{OmegaGrid, Section, SignedSection};
use crate::systems::{solenoid_offset, BaseDensity, SkewSystem, SolenoidSystem};
use crate::transfer::apply_k_at;

/// Number of levels itemized in [`UnfoldReport::level_mass`].
pub const REPORTED_LEVELS: usize = 64;

/// Truncation of the unfolding series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnfoldOptions {
    /// Deepest level `k` of `𝒦^k(ν̄·1_{τ>k})` summed at a node.
    pub k_max: usize,
    /// A node's series stops once the estimated remainder is below
    /// `tail_tol` times the partial sum.
    pub tail_tol: f64,
    /// Largest accepted weight deficit at a node; `None` accepts any.
    pub max_deficit: Option<f64>,
    pub compaction: Compaction,
}

impl UnfoldOptions {
    pub fn new(compaction: Compaction) -> Self {
        Self { k_max: 200_000, tail_tol: 1e-4, max_deficit: Some(1e-3), compaction }
    }

    /// Series cut at `k_max` levels, deficits reported but not enforced.
    pub fn truncated(k_max: usize, compaction: Compaction) -> Self {
        Self { k_max, tail_tol: 0.0, max_deficit: None, compaction }
    }
}

/// Truncation bookkeeping of one unfolding.
#[derive(Clone, Debug, Default, Serialize)]
pub struct UnfoldReport {
    /// Largest number of levels used at a node.
    pub levels: usize,
    /// Largest relative weight left out at a node.
    pub max_deficit: f64,
    /// `∫ deficit dη`.
    pub tail_mass: f64,
    /// `η`-mass carried by levels `0..REPORTED_LEVELS`.
    pub level_mass: Vec<f64>,
    pub compaction_bound: f64,
}

/// Words contributing at one base point: source `Θ_n`, fibre map
/// `P_n ∘ g_{Θ_n}` and weight `ρ̄(Θ_n)Θ_n' / (Eρ)(ω)`.
#[derive(Clone, Debug)]
struct NodeSeries {
    sources: Vec<f64>,
    maps: Vec<AffineMap>,
    weights: Vec<f64>,
    deficit: f64,
}

fn node_series(induced: &InducedSystem, omega: f64, options: &UnfoldOptions) -> Result<NodeSeries> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::OutsideBase(omega, 0.0, 1.0));
    }
    if omega >= 0.5 {
        return Ok(NodeSeries { sources: vec![omega], maps: vec![AffineMap::identity()], weights: vec![1.0], deficit: 0.0 });
    }
    if options.k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let lsv = induced.lsv();
    let rho = induced.density();
    let lambda = induced.lambda_fib();
    let rho_half = rho.eval(0.5);
    let mut s = NodeSeries { sources: Vec::new(), maps: Vec::new(), weights: Vec::new(), deficit: 0.0 };
    let mut y = omega;
    let mut dy = 1.0;
    let mut prefix = AffineMap::identity();
    let mut sum = 0.0;
    loop {
        let theta = 0.5 * (1.0 + y);
        let r = rho.eval(theta) * 0.5 * dy;
        s.sources.push(theta);
        s.maps.push(prefix.after(&AffineMap::scaled(lambda, solenoid_offset(theta))));
        s.weights.push(r);
        sum += r;
        let tail = rho_half * 0.5 * tail_derivative_sum(&lsv, y, dy);
        if tail <= options.tail_tol * sum || s.weights.len() >= options.k_max {
            let total = sum + tail;
            s.weights.iter_mut().for_each(|w| *w /= total);
            s.deficit = tail / total;
            return Ok(s);
        }
        let u = lsv.left_inverse(y);
        dy /= lsv.left_derivative(u);
        prefix = prefix.after(&AffineMap::scaled(lambda, solenoid_offset(u)));
        y = u;
    }
}

fn assemble<M: FibreMeasure>(nu_bar: &Section<M>, series: &NodeSeries, scale: f64, bx: &DomainBox) -> Result<M> {
    let mut pieces: Vec<(f64, usize, usize)> = Vec::new();
    for (n, (&u, &w)) in series.sources.iter().zip(&series.weights).enumerate() {
        for (k, c) in nu_bar.interpolation_weights(u)? {
            pieces.push((w * c * scale, k, n));
        }
    }
    let terms: Vec<(f64, &M, &dyn FibreMap)> = pieces
        .iter()
        .map(|&(c, k, n)| (c, &nu_bar.stored()[k], &series.maps[n] as &dyn FibreMap))
        .collect();
    M::push_combine(nu_bar.dim(), &terms, bx)
}

fn check_induced_grid<M: FibreMeasure>(nu_bar: &Section<M>) -> Result<()> {
    if nu_bar.grid().bounds() != (0.5, 1.0) {
        return Err(Error::GridMismatch("induced sections live on [1/2, 1]".into()));
    }
    Ok(())
}

fn check_deficit(deficit: f64, omega: f64, options: &UnfoldOptions) -> Result<()> {
    match options.max_deficit {
        Some(m) if deficit > m => Err(Error::Truncation(format!(
            "unfolding deficit {deficit:.3e} at omega = {omega} exceeds {m:e}; k_max = {} is too small",
            options.k_max
        ))),
        _ => Ok(()),
    }
}

fn compact_node<M: FibreMeasure>(raw: M, compaction: &Compaction, bx: &DomainBox) -> Result<(M, f64)> {
    let mode = compaction.mode.unwrap_or_else(|| M::default_mode(raw.dim()));
    let (mut out, bound) = if raw.len() > compaction.budget || (raw.dim() == 2 && mode == CompactionMode::Grid) {
        raw.compact(compaction.budget, mode, bx)?
    } else {
        (raw, 0.0)
    };
    out.restore_mass();
    Ok((out, bound))
}

/// `(𝒰ν̄)_ω` before compaction. Probability sections are renormalized after
/// truncation; signed ones keep the raw weights. Returns the deficit.
fn unfold_raw<M: FibreMeasure>(
    induced: &InducedSystem,
    nu_bar: &Section<M>,
    omega: f64,
    options: &UnfoldOptions,
    renormalize: bool,
) -> Result<(M, NodeSeries)> {
    let series = node_series(induced, omega, options)?;
    let scale = if renormalize { 1.0 / (1.0 - series.deficit) } else { 1.0 };
    let m = assemble(nu_bar, &series, scale, &induced.fibre_box())?;
    Ok((m, series))
}

/// Uncompacted `(𝒰ν̄)_ω` of a probability section and the node deficit.
pub fn unfold_at(
    induced: &InducedSystem,
    nu_bar: &Section<AtomicMeasure>,
    omega: f64,
    options: &UnfoldOptions,
) -> Result<(AtomicMeasure, f64)> {
    check_induced_grid(nu_bar)?;
    let (m, s) = unfold_raw(induced, nu_bar, omega, options, true)?;
    Ok((m, s.deficit))
}

fn unfold_section<M: FibreMeasure>(
    induced: &InducedSystem,
    nu_bar: &Section<M>,
    grid: &OmegaGrid,
    density: &BaseDensity,
    options: &UnfoldOptions,
    renormalize: bool,
) -> Result<(Section<M>, UnfoldReport)> {
    check_induced_grid(nu_bar)?;
    if grid.bounds() != (0.0, 1.0) {
        return Err(Error::GridMismatch("unfolded sections live on [0, 1]".into()));
    }
    let bx = induced.fibre_box();
    let nodes: Vec<(M, NodeSeries, f64)> = grid
        .nodes()
        .par_iter()
        .map(|&w| {
            let (raw, series) = unfold_raw(induced, nu_bar, w, options, renormalize)?;
            check_deficit(series.deficit, w, options)?;
            let (m, bound) = compact_node(raw, &options.compaction, &bx)?;
            Ok((m, series, bound))
        })
        .collect::<Result<_>>()?;
    let mut report = UnfoldReport::default();
    let mut deficits = Vec::with_capacity(nodes.len());
    let mut levels = vec![vec![0.0; grid.len()]; REPORTED_LEVELS];
    for (j, (&w, (_, s, bound))) in grid.nodes().iter().zip(&nodes).enumerate() {
        report.levels = report.levels.max(s.weights.len());
        report.max_deficit = report.max_deficit.max(s.deficit);
        report.compaction_bound = report.compaction_bound.max(*bound);
        deficits.push(s.deficit);
        let scale = if renormalize { 1.0 / (1.0 - s.deficit) } else { 1.0 };
        let first = if w >= 0.5 { 0 } else { 1 };
        for (n, &c) in s.weights.iter().enumerate().take(REPORTED_LEVELS - first) {
            levels[n + first][j] = c * scale;
        }
    }
    report.tail_mass = density.integrate_nodes(grid, &deficits)?;
    report.level_mass = levels.iter().map(|l| density.integrate_nodes(grid, l)).collect::<Result<_>>()?;
    let values = nodes.into_iter().map(|n| n.0).collect();
    Ok((Section::new(grid.clone(), values)?, report))
}

/// `𝒰ν̄` for a probability section `ν̄` over `Ω̄`, on `grid` over `[0, 1]`.
/// For `ω < ½` this is `Σ_n w_n (P_n ∘ g_{Θ_n})_* ν̄_{Θ_n(ω)}` with
/// `P_n = g_{y_1} ∘ … ∘ g_{y_n}`; the truncated weights are renormalized.
/// `density` is the unfolded base density used for the report.
pub fn unfold(
    induced: &InducedSystem,
    nu_bar: &Section<AtomicMeasure>,
    grid: &OmegaGrid,
    density: &BaseDensity,
    options: &UnfoldOptions,
) -> Result<(Section<AtomicMeasure>, UnfoldReport)> {
    unfold_section(induced, nu_bar, grid, density, options, true)
}

/// `𝒰ν̄` for a mass-zero signed section; weights are not renormalized and
/// rounding drift of the mass is removed from the dominant atom.
pub fn unfold_signed(
    induced: &InducedSystem,
    nu_bar: &SignedSection,
    grid: &OmegaGrid,
    density: &BaseDensity,
    options: &UnfoldOptions,
) -> Result<(SignedSection, UnfoldReport)> {
    unfold_section(induced, nu_bar, grid, density, options, false)
}

/// `(𝒰_plus − 𝒰_minus)ν̄ · scale`, formed from uncompacted images and
/// compacted once in signed grid mode. Returns the largest compaction bound.
pub fn unfold_difference(
    plus: &InducedSystem,
    minus: &InducedSystem,
    nu_bar: &Section<AtomicMeasure>,
    grid: &OmegaGrid,
    options: &UnfoldOptions,
    scale: f64,
) -> Result<(SignedSection, f64)> {
    check_induced_grid(nu_bar)?;
    let bx = plus.fibre_box();
    let signed = Compaction { mode: Some(options.compaction.mode.unwrap_or(CompactionMode::Grid)), ..options.compaction };
    let out: Vec<(SignedAtomicMeasure, f64)> = grid
        .nodes()
        .par_iter()
        .map(|&w| {
            let (a, sa) = unfold_raw(plus, nu_bar, w, options, true)?;
            let (b, sb) = unfold_raw(minus, nu_bar, w, options, true)?;
            check_deficit(sa.deficit.max(sb.deficit), w, options)?;
            compact_node(SignedAtomicMeasure::difference(&a, &b, scale), &signed, &bx)
        })
        .collect::<Result<_>>()?;
    let bound = out.iter().map(|o| o.1).fold(0.0, f64::max);
    Ok((Section::new(grid.clone(), out.into_iter().map(|o| o.0).collect())?, bound))
}

fn check_pair(full: &SolenoidSystem, induced: &InducedSystem) -> Result<()> {
    if full.alpha() != induced.alpha() || full.lambda_fib() != induced.lambda_fib() {
        return Err(Error::InvalidArgument("full and induced systems have different parameters".into()));
    }
    Ok(())
}

/// Induced-operator identity at every node of the `ν̄` grid.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub k_cap: usize,
    /// `sup_ω W1((K̄ν̄)_ω, normalized Σ_{k ≤ k_cap} (K^k(ν̄·1_{τ=k}))_ω)`.
    pub residual: f64,
    pub node_residuals: Vec<f64>,
    /// Largest weight of the paths longer than `k_cap`.
    pub dropped_mass: f64,
    /// Largest compaction bound of either side.
    pub compaction_bound: f64,
}

/// Sources within this distance of `½` count as the boundary point.
const BOUNDARY_TOL: f64 = 1e-12;

struct PathTerm {
    length: usize,
    weight: f64,
    source: f64,
    map: AffineMap,
}

/// All `2^k` backward paths of the full system of length `k ≤ k_cap` from
/// `ω`, keeping those whose source lies in `(½, 1]` and whose intermediate
/// points all lie in `[0, ½]`, i.e. whose source first returns at step `k`.
/// The boundary point `½` belongs to the left branch, as for the induced
/// words; the path's own points are used instead of forward iteration.
fn returning_paths(full: &SolenoidSystem, omega: f64, k_cap: usize) -> Vec<PathTerm> {
    let mut out = Vec::new();
    // (point, weight, map, all intermediate points below ½)
    let mut frontier = vec![(omega, 1.0, AffineMap::identity(), true)];
    for k in 1..=k_cap {
        let mut next = Vec::with_capacity(2 * frontier.len());
        for (y, weight, map, below) in frontier {
            let p = full.weights(y);
            for (i, &pi) in p.iter().enumerate() {
                let u = full.inverse(i, y);
                let m = map.after(&full.fibre_map(i, u));
                let w = weight * pi;
                let returned = u > 0.5 + BOUNDARY_TOL;
                if returned && below {
                    out.push(PathTerm { length: k, weight: w, source: u, map: m });
                }
                next.push((u, w, m, below && !returned));
            }
        }
        frontier = next;
    }
    out
}

/// Compares `K̄ν̄` of the induced system with the return-time-restricted sum
/// of full-system powers, built path by path from the full weights and fibre
/// maps. The mass of paths longer than `k_cap` is put on the deepest
/// returning path, as the induced operator does with its dropped words.
pub fn induced_operator_identity_check(
    full: &SolenoidSystem,
    induced: &InducedSystem,
    nu_bar: &Section<AtomicMeasure>,
    k_cap: usize,
    compaction: &Compaction,
) -> Result<IdentityCheck> {
    check_pair(full, induced)?;
    check_induced_grid(nu_bar)?;
    if k_cap == 0 {
        return Err(Error::InvalidArgument("k_cap must be at least 1".into()));
    }
    let bx = induced.fibre_box();
    let rows: Vec<(f64, f64, f64)> = nu_bar
        .grid()
        .nodes()
        .par_iter()
        .map(|&w| {
            let (lhs, _) = apply_k_at(induced, nu_bar, w)?;
            let (lhs, b1) = compact_node(lhs, compaction, &bx)?;
            let paths = returning_paths(full, w, k_cap);
            let total: f64 = paths.iter().map(|p| p.weight).sum();
            let deepest = (0..paths.len())
                .max_by_key(|&i| paths[i].length)
                .ok_or_else(|| Error::Incomplete(format!("no returning path at omega = {w}")))?;
            let mut weights: Vec<f64> = paths.iter().map(|p| p.weight).collect();
            weights[deepest] += 1.0 - total;
            let series = NodeSeries {
                sources: paths.iter().map(|p| p.source).collect(),
                maps: paths.iter().map(|p| p.map).collect(),
                weights,
                deficit: 0.0,
            };
            let rhs = assemble(nu_bar, &series, 1.0, &bx)?;
            let (rhs, b2) = compact_node(rhs, compaction, &bx)?;
            Ok((wasserstein1(&lhs, &rhs)?, 1.0 - total, b1.max(b2)))
        })
        .collect::<Result<_>>()?;
    Ok(IdentityCheck {
        k_cap,
        residual: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        node_residuals: rows.iter().map(|r| r.0).collect(),
        dropped_mass: rows.iter().map(|r| r.1).fold(0.0, f64::max),
        compaction_bound: rows.iter().map(|r| r.2).fold(0.0, f64::max),
    })
}

/// Invariance defect of an unfolded fixed point.
#[derive(Clone, Debug, Serialize)]
pub struct UnfoldedResidual {
    pub k_max: usize,
    /// `sup_ω W1((K𝒰ν̄)_ω, (𝒰ν̄)_ω)` over the full grid.
    pub residual: f64,
    pub node_residuals: Vec<f64>,
    /// Largest node deficit times the fibre diameter.
    pub tail: f64,
    /// Compaction bounds plus the off-grid defect of `ν̄`.
    pub slack: f64,
    /// `2 (tail + slack)`.
    pub bound: f64,
}

/// `sup_ω W1(K ν̄*, ν̄*)` at the midpoints of the `ν̄` grid.
fn off_grid_defect(induced: &InducedSystem, nu_bar: &Section<AtomicMeasure>, compaction: &Compaction) -> Result<f64> {
    let bx = induced.fibre_box();
    let nodes = nu_bar.grid().nodes();
    let mids: Vec<f64> = nodes.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    let d: Vec<f64> = mids
        .par_iter()
        .map(|&w| {
            let (a, _) = compact_node(apply_k_at(induced, nu_bar, w)?.0, compaction, &bx)?;
            let (b, _) = compact_node(nu_bar.interpolate(w)?, compaction, &bx)?;
            wasserstein1(&a, &b)
        })
        .collect::<Result<_>>()?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

/// Evaluates `𝒰ν̄*` directly at every node and at its full-system preimages
/// and compares `(K𝒰ν̄*)_ω` with `(𝒰ν̄*)_ω`.
pub fn unfolded_fixed_point_residual(
    full: &SolenoidSystem,
    induced: &InducedSystem,
    nu_bar: &Section<AtomicMeasure>,
    options: &UnfoldOptions,
) -> Result<UnfoldedResidual> {
    check_pair(full, induced)?;
    check_induced_grid(nu_bar)?;
    let bx = full.fibre_box();
    let rows: Vec<(f64, f64, f64)> = full
        .grid()
        .nodes()
        .par_iter()
        .map(|&w| {
            let (a, da) = unfold_at(induced, nu_bar, w, options)?;
            let (a, ba) = compact_node(a, &options.compaction, &bx)?;
            let mut parts = Vec::new();
            let mut deficit = da;
            for br in full.branches(w) {
                if br.weight == 0.0 {
                    continue;
                }
                let (m, d) = unfold_at(induced, nu_bar, br.source, options)?;
                deficit = deficit.max(d);
                parts.push((br.weight, m, br.map));
            }
            let terms: Vec<(f64, &AtomicMeasure, &dyn FibreMap)> =
                parts.iter().map(|(c, m, h)| (*c, m, h as &dyn FibreMap)).collect();
            let b = AtomicMeasure::push_combine(bx.dim(), &terms, &bx)?;
            let (b, bb) = compact_node(b, &options.compaction, &bx)?;
            Ok((wasserstein1(&a, &b)?, deficit, ba + bb))
        })
        .collect::<Result<_>>()?;
    let defect = off_grid_defect(induced, nu_bar, &options.compaction)?;
    let tail = rows.iter().map(|r| r.1).fold(0.0, f64::max) * bx.diameter();
    let slack = rows.iter().map(|r| r.2).fold(0.0, f64::max) + defect;
    Ok(UnfoldedResidual {
        k_max: options.k_max,
        residual: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        node_residuals: rows.iter().map(|r| r.0).collect(),
        tail,
        slack,
        bound: 2.0 * (tail + slack),
    })
}
