//! Parameter derivatives of invariant sections: the difference-quotient
//! seed `τ`, the Neumann resolvent `ν̇ = Σ Kⁿτ`, the analytic pairing of
//! `K̇ν`, the assembled response of `∫Φ dμ`, a finite-difference oracle and
//! the tangent operator whose fixed point is the `ω`-derivative of the
//! invariant section.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{
    standard_bank, AffineMap, AtomicMeasure, Compaction, CompactionMode, FibreMap, FibreMeasure,
    FirstOrderDistribution, Point, SignedAtomicMeasure, TestBank, TestFunction,
};
use crate::observable::Observable;
use crate::section::{sup_dual_norm, ConvergenceReport, FirstOrderSection, Section, SignedSection};
use crate::systems::{SkewSystem, SystemFamily};
use crate::transfer::{apply_k, apply_k_at, fixed_point, FixedPoint, FixedPointOptions};

/// Dual order used for the norms of `τ` and `ν̇`.
pub const DUAL_ORDER: usize = 3;

/// Difference quotient used for the seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedScheme {
    /// `(K_{α0+ε} − K_{α0})σ*/ε`.
    Forward,
    /// `(K_{α0+ε} − K_{α0−ε})σ*/2ε`.
    Central,
}

/// `τ` together with the step that produced it.
#[derive(Clone, Debug)]
pub struct ResponseSeed {
    pub tau: SignedSection,
    pub eps: f64,
    pub alpha0: f64,
    pub scheme: SeedScheme,
    /// Largest signed-compaction bound over the nodes.
    pub compaction_bound: f64,
}

fn operator_difference<S1, S2>(
    plus: &S1,
    minus: &S2,
    sigma: &Section<AtomicMeasure>,
    scale: f64,
    compaction: &Compaction,
) -> Result<(SignedSection, f64)>
where
    S1: SkewSystem + ?Sized,
    S2: SkewSystem + ?Sized,
{
    let bx = plus.fibre_box();
    let mode = compaction.mode.unwrap_or(CompactionMode::Grid);
    let node = |w: f64| -> Result<(SignedAtomicMeasure, f64)> {
        let (a, _) = apply_k_at(plus, sigma, w)?;
        let (b, _) = apply_k_at(minus, sigma, w)?;
        let d = SignedAtomicMeasure::difference(&a, &b, scale);
        let (mut d, bound) = d.compact(compaction.budget, mode, &bx)?;
        d.restore_mass();
        Ok((d, bound))
    };
    let grid = sigma.grid();
    if sigma.is_constant() && plus.constant_sections() && minus.constant_sections() {
        let (lo, hi) = grid.bounds();
        let (d, bound) = node(0.5 * (lo + hi))?;
        return Ok((Section::constant(grid.clone(), d), bound));
    }
    let out: Vec<(SignedAtomicMeasure, f64)> = grid.nodes().par_iter().map(|&w| node(w)).collect::<Result<_>>()?;
    let bound = out.iter().map(|o| o.1).fold(0.0, f64::max);
    Ok((Section::new(grid.clone(), out.into_iter().map(|o| o.0).collect())?, bound))
}

/// `τ = (K_{α0+ε} − K_{α0})σ*/ε` (or the central variant), formed from the
/// uncompacted operator images and compacted once in signed mode.
pub fn response_seed<F: SystemFamily + ?Sized>(
    family: &F,
    alpha0: f64,
    eps: f64,
    scheme: SeedScheme,
    sigma: &Section<AtomicMeasure>,
    compaction: &Compaction,
) -> Result<ResponseSeed> {
    if eps == 0.0 || !eps.is_finite() {
        return Err(Error::InvalidArgument("seed step must be nonzero".into()));
    }
    let (a, b) = family.interval();
    let (lo, hi) = match scheme {
        SeedScheme::Forward => (alpha0.min(alpha0 + eps), alpha0.max(alpha0 + eps)),
        SeedScheme::Central => (alpha0 - eps.abs(), alpha0 + eps.abs()),
    };
    if lo <= a || hi >= b {
        return Err(Error::InvalidArgument(format!("seed stencil [{lo}, {hi}] leaves ({a}, {b})")));
    }
    let plus = family.system(alpha0 + eps)?;
    let (tau, bound) = match scheme {
        SeedScheme::Forward => {
            let base = family.system(alpha0)?;
            operator_difference(plus.as_ref(), base.as_ref(), sigma, 1.0 / eps, compaction)?
        }
        SeedScheme::Central => {
            let minus = family.system(alpha0 - eps)?;
            operator_difference(plus.as_ref(), minus.as_ref(), sigma, 0.5 / eps, compaction)?
        }
    };
    Ok(ResponseSeed { tau, eps, alpha0, scheme, compaction_bound: bound })
}

/// `x ↦ ∇φ(h(x)) · u(x)` style helper: `φ ∘ h` as a test function.
struct Pullback<'a> {
    phi: &'a dyn TestFunction,
    map: &'a AffineMap,
}

impl TestFunction for Pullback<'_> {
    fn value(&self, x: Point) -> f64 {
        self.phi.value(self.map.apply(x))
    }
    fn gradient(&self, x: Point) -> Point {
        let g = self.phi.gradient(self.map.apply(x));
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

/// Analytic `⟨(K̇σ)_ω, φ⟩`:
/// `Σ_i ṗ_i⟨ν_θ, φ∘g⟩ + p_i θ̇_i⟨ν'_θ, φ∘g⟩ + p_i⟨ν_θ, ∇φ(g)·∂_αg⟩ + p_i θ̇_i⟨ν_θ, ∇φ(g)·∂_ωg⟩`
/// with `θ = θ_i(ω)`. `tangent` supplies `ν'`; it may be omitted when the
/// section is constant or no branch moves.
pub fn kdot_pair<S: SkewSystem + ?Sized>(
    sys: &S,
    sigma: &Section<AtomicMeasure>,
    omega: f64,
    phi: &dyn TestFunction,
    tangent: Option<&FirstOrderSection>,
) -> Result<f64> {
    let missing = |what: &str| Error::Incomplete(format!("system does not provide {what}"));
    let pdot = sys.weights_dalpha(omega).ok_or_else(|| missing("weight derivatives in the parameter"))?;
    let mut acc = 0.0;
    for b in sys.branches(omega) {
        let i = b.index;
        let tdot = sys.inverse_dalpha(i, omega).ok_or_else(|| missing("branch derivatives in the parameter"))?;
        let pull = Pullback { phi, map: &b.map };
        for (k, c) in sigma.interpolation_weights(b.source)? {
            let nu = &sigma.stored()[k];
            acc += c * pdot[i] * nu.pair(&pull);
            let mut t3 = 0.0;
            let mut t4 = 0.0;
            for (x, w) in nu.points().iter().zip(nu.weights()) {
                let g = phi.gradient(b.map.apply(*x));
                let da = sys.fibre_dalpha(i, b.source, *x).ok_or_else(|| missing("fibre derivatives in the parameter"))?;
                t3 += w * (g[0] * da[0] + g[1] * da[1]);
                if tdot != 0.0 {
                    let dw = sys.fibre_domega(i, b.source, *x);
                    t4 += w * (g[0] * dw[0] + g[1] * dw[1]);
                }
            }
            acc += c * b.weight * (t3 + tdot * t4);
        }
        if tdot != 0.0 && !sigma.is_constant() {
            let xi = tangent.ok_or_else(|| {
                Error::Incomplete("moving branches on a non-constant section need the tangent section".into())
            })?;
            for (k, c) in xi.interpolation_weights(b.source)? {
                acc += c * b.weight * tdot * xi.stored()[k].pair(&pull);
            }
        }
    }
    Ok(acc)
}

/// `ν̇ = Σ_{n ≤ N} Kⁿτ` with its truncation data.
#[derive(Clone, Debug)]
pub struct SampleDerivative {
    pub nu_dot: SignedSection,
    /// Truncation order `N`.
    pub terms: usize,
    /// `λ^N ‖τ‖ / (1 − λ)`.
    pub tail_bound: f64,
    /// Dual-norm estimate of `τ`.
    pub tau_norm: f64,
    pub lambda: f64,
}

/// `N = ⌈log(tol(1 − λ)/‖τ‖) / log λ⌉`, zero when `‖τ‖ ≤ tol(1 − λ)`.
pub fn neumann_order(lambda: f64, tau_norm: f64, tol: f64) -> usize {
    if tau_norm <= tol * (1.0 - lambda) {
        return 0;
    }
    ((tol * (1.0 - lambda) / tau_norm).ln() / lambda.ln()).ceil() as usize
}

/// Standard dual-norm bank on the fibre box of `sys`.
pub fn default_bank<S: SkewSystem + ?Sized>(sys: &S) -> Result<TestBank> {
    standard_bank(&sys.fibre_box(), DUAL_ORDER, if sys.fibre_box().dim() == 1 { 24 } else { 48 })
}

/// Partial sums `S_n = Σ_{k ≤ n} Kᵏτ` for `n = 0..=n_max`.
pub fn neumann_partial_sums<S: SkewSystem + ?Sized>(
    sys: &S,
    tau: &SignedSection,
    n_max: usize,
    compaction: &Compaction,
) -> Result<Vec<SignedSection>> {
    let mut term = tau.clone();
    let mut sum = tau.clone();
    let mut out = vec![sum.clone()];
    for _ in 0..n_max {
        term = apply_k(sys, &term, compaction)?.0;
        sum = compact_section(&sum.add_scaled(1.0, &term)?, compaction, sys)?;
        out.push(sum.clone());
    }
    Ok(out)
}

fn compact_section<M: FibreMeasure, S: SkewSystem + ?Sized>(s: &Section<M>, compaction: &Compaction, sys: &S) -> Result<Section<M>> {
    let bx = sys.fibre_box();
    s.map(|m| {
        if m.len() <= compaction.budget {
            return Ok(m.clone());
        }
        let mode = compaction.mode.unwrap_or_else(|| M::default_mode(m.dim()));
        let (mut c, _) = m.compact(compaction.budget, mode, &bx)?;
        c.restore_mass();
        Ok(c)
    })
}

/// `ν̇ = (I − K)^{-1} τ` by the truncated Neumann series.
pub fn neumann_resolvent<S: SkewSystem + ?Sized>(
    sys: &S,
    tau: &SignedSection,
    tol: f64,
    compaction: &Compaction,
    bank: &TestBank,
) -> Result<SampleDerivative> {
    let lambda = sys.lambda_certificate()?;
    let tau_norm = sup_dual_norm(tau, bank, bank.k())?;
    let terms = neumann_order(lambda, tau_norm, tol);
    let sums = neumann_partial_sums(sys, tau, terms, compaction)?;
    let nu_dot = sums.into_iter().last().expect("at least one partial sum");
    let tail_bound = lambda.powi(terms as i32) * tau_norm / (1.0 - lambda);
    Ok(SampleDerivative { nu_dot, terms, tail_bound, tau_norm, lambda })
}

/// Settings shared by the response routines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResponseOptions {
    pub eps: f64,
    pub scheme: SeedScheme,
    /// Tolerance of the Neumann tail bound.
    pub tol: f64,
    pub fixed_point: FixedPointOptions,
    /// Compaction of signed sections (`τ`, `ν̇`).
    pub signed: Compaction,
    /// Step of the density finite difference.
    pub density_eps: f64,
}

impl ResponseOptions {
    pub fn new(dim: usize) -> Self {
        let budget = if dim == 1 { 256 } else { 1024 };
        Self {
            eps: 1e-3,
            scheme: SeedScheme::Forward,
            tol: 1e-6,
            fixed_point: FixedPointOptions::new(1e-8, 200, Compaction::new(budget)),
            signed: Compaction::new(budget),
            density_eps: 1e-3,
        }
    }
}

/// Everything computed on the way to `ν̇`.
#[derive(Clone, Debug)]
pub struct SampleDerivativeRun {
    pub fixed_point: FixedPoint,
    pub seed: ResponseSeed,
    pub derivative: SampleDerivative,
}

/// Fixed point at `α0`, seed and Neumann resolvent.
pub fn sample_derivative<F: SystemFamily + ?Sized>(
    family: &F,
    alpha0: f64,
    options: &ResponseOptions,
) -> Result<SampleDerivativeRun> {
    let sys = family.system(alpha0)?;
    let fp = fixed_point(sys.as_ref(), &options.fixed_point, None)?;
    let seed = response_seed(family, alpha0, options.eps, options.scheme, &fp.section, &options.signed)?;
    let bank = default_bank(sys.as_ref())?;
    let derivative = neumann_resolvent(sys.as_ref(), &seed.tau, options.tol, &options.signed, &bank)?;
    Ok(SampleDerivativeRun { fixed_point: fp, seed, derivative })
}

/// `⟨σ_ω, Φ(ω, ·)⟩` at every grid node.
pub fn node_pairings<M: FibreMeasure>(s: &Section<M>, observable: Observable) -> Vec<f64> {
    s.grid()
        .nodes()
        .iter()
        .enumerate()
        .map(|(j, &w)| s.value(j).pair(&observable.at(w)))
        .collect()
}

/// Terms of the assembled response.
#[derive(Clone, Debug, Serialize)]
pub struct SkewResponse {
    pub observable: Observable,
    pub alpha0: f64,
    pub epsilon: f64,
    /// `∫ ⟨ν̇_ω, Φ(ω, ·)⟩ dη`.
    pub sample_term: f64,
    /// `∫ ψ dη̇` with `ψ(ω) = ⟨ν_ω, Φ(ω, ·)⟩`.
    pub density_term: f64,
    pub value: f64,
    pub tail_bound: f64,
    pub neumann_terms: usize,
}

/// `∫ ψ dη̇` with `ψ(ω) = ⟨σ_ω, Φ(ω, ·)⟩` held fixed: the central difference
/// of `∫ ψ dη_α` over `α0 ± ε`, each integral taken with the quadrature of
/// its own density (including the singular end correction, whose exponent
/// may move with `α`). Zero when the base density is fixed.
pub fn density_term<F: SystemFamily + ?Sized>(
    family: &F,
    alpha0: f64,
    density_eps: f64,
    sigma: &Section<AtomicMeasure>,
    observable: Observable,
) -> Result<f64> {
    if !family.variation().base_density {
        return Ok(0.0);
    }
    if !(density_eps > 0.0) {
        return Err(Error::InvalidArgument("density step must be positive".into()));
    }
    let (a, b) = family.interval();
    if alpha0 - density_eps <= a || alpha0 + density_eps >= b {
        return Err(Error::InvalidArgument("density stencil leaves the parameter interval".into()));
    }
    let grid = sigma.grid();
    let psi = node_pairings(sigma, observable);
    let plus = family.system(alpha0 + density_eps)?.density().integrate_nodes(grid, &psi)?;
    let minus = family.system(alpha0 - density_eps)?.density().integrate_nodes(grid, &psi)?;
    Ok((plus - minus) / (2.0 * density_eps))
}

/// `d/dα ∫ Φ dμ_α = ∫ ⟨ν̇_ω, Φ(ω, ·)⟩ dη + ∫ ψ dη̇` from a computed `ν̇`.
pub fn assemble_response<F: SystemFamily + ?Sized>(
    family: &F,
    alpha0: f64,
    observable: Observable,
    run: &SampleDerivativeRun,
    density_eps: f64,
) -> Result<SkewResponse> {
    let sys = family.system(alpha0)?;
    let nu_dot = &run.derivative.nu_dot;
    let sample_vals = node_pairings(nu_dot, observable);
    let sample_term = sys.density().integrate_nodes(nu_dot.grid(), &sample_vals)?;
    let density_term = density_term(family, alpha0, density_eps, &run.fixed_point.section, observable)?;
    Ok(SkewResponse {
        observable,
        alpha0,
        epsilon: run.seed.eps,
        sample_term,
        density_term,
        value: sample_term + density_term,
        tail_bound: run.derivative.tail_bound,
        neumann_terms: run.derivative.terms,
    })
}

/// Response of `∫ Φ dμ_α` at `α0` by the resolvent route.
pub fn skew_response<F: SystemFamily + ?Sized>(
    family: &F,
    alpha0: f64,
    observable: Observable,
    options: &ResponseOptions,
) -> Result<SkewResponse> {
    let run = sample_derivative(family, alpha0, options)?;
    assemble_response(family, alpha0, observable, &run, options.density_eps)
}

/// `∫ ⟨ν_ω, Φ(ω, ·)⟩ dη` on the section grid.
pub fn skew_integral<S: SkewSystem + ?Sized>(sys: &S, sigma: &Section<AtomicMeasure>, observable: Observable) -> Result<f64> {
    let vals = node_pairings(sigma, observable);
    sys.density().integrate_nodes(sigma.grid(), &vals)
}

/// Central difference of `∫ Φ dμ_α` between fixed points at `α0 ± ε`.
pub fn finite_difference_response<F: SystemFamily + ?Sized>(
    family: &F,
    alpha0: f64,
    eps: f64,
    observable: Observable,
    options: &FixedPointOptions,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let value = |a: f64| -> Result<f64> {
        let sys = family.system(a)?;
        let fp = fixed_point(sys.as_ref(), options, None)?;
        skew_integral(sys.as_ref(), &fp.section, observable)
    };
    Ok((value(alpha0 + eps)? - value(alpha0 - eps)?) / (2.0 * eps))
}

/// Fixed point of the tangent operator.
#[derive(Clone, Debug)]
pub struct TangentSection {
    pub xi: FirstOrderSection,
    pub report: ConvergenceReport,
    /// Dual-norm estimate of `𝒯ξ* − ξ*`.
    pub residual: f64,
}

/// `ℛσ`: at `ω`, scalar atoms `p_i'(ω) w` and cotangent atoms
/// `p_i θ_i' w ∂_ωg(θ_i, x)` at `g(θ_i, x)` for every atom `(x, w)` of `σ_{θ_i}`.
pub fn remainder_section<S: SkewSystem + ?Sized>(
    sys: &S,
    sigma: &Section<AtomicMeasure>,
    compaction: &Compaction,
) -> Result<FirstOrderSection> {
    let dim = sigma.dim();
    let bx = sys.fibre_box();
    let node = |w: f64| -> Result<FirstOrderDistribution> {
        let dp = sys.weights_domega(w);
        let mut out = FirstOrderDistribution::zero(dim);
        for b in sys.branches(w) {
            for (k, c) in sigma.interpolation_weights(b.source)? {
                let nu = &sigma.stored()[k];
                for (x, wt) in nu.points().iter().zip(nu.weights()) {
                    let y = b.map.apply(*x);
                    let dw = sys.fibre_domega(b.index, b.source, *x);
                    let s = c * b.weight * b.slope * wt;
                    out.push_atom(y, c * dp[b.index] * wt, [s * dw[0], s * dw[1]]);
                }
            }
        }
        if out.len() > compaction.budget {
            out = out.compact(compaction.budget, compaction.mode.unwrap_or(CompactionMode::Grid), &bx)?.0;
        }
        Ok(out)
    };
    let grid = sigma.grid();
    if sigma.is_constant() && sys.constant_sections() {
        let (lo, hi) = grid.bounds();
        return Ok(Section::constant(grid.clone(), node(0.5 * (lo + hi))?));
    }
    let values = grid.nodes().par_iter().map(|&w| node(w)).collect::<Result<Vec<_>>>()?;
    Section::new(grid.clone(), values)
}

/// `𝒯ξ = Σ_i p_i θ_i' (g_i)_* ξ_{θ_i} + ℛσ`.
pub fn apply_tangent<S: SkewSystem + ?Sized>(
    sys: &S,
    xi: &FirstOrderSection,
    remainder: &FirstOrderSection,
    compaction: &Compaction,
) -> Result<FirstOrderSection> {
    let dim = xi.dim();
    let bx = sys.fibre_box();
    let node = |j: usize, w: f64| -> Result<FirstOrderDistribution> {
        let mut pieces: Vec<(f64, usize, AffineMap)> = Vec::new();
        for b in sys.branches(w) {
            for (k, c) in xi.interpolation_weights(b.source)? {
                pieces.push((c * b.weight * b.slope, k, b.map));
            }
        }
        let terms: Vec<(f64, &FirstOrderDistribution, &dyn FibreMap)> =
            pieces.iter().map(|(c, k, m)| (*c, &xi.stored()[*k], m as &dyn FibreMap)).collect();
        let pushed = FirstOrderDistribution::push_combine(dim, &terms, &bx)?;
        let sum = pushed.add_scaled(1.0, remainder.value(j));
        Ok(if sum.len() > compaction.budget {
            sum.compact(compaction.budget, compaction.mode.unwrap_or(CompactionMode::Grid), &bx)?.0
        } else {
            sum
        })
    };
    let grid = xi.grid();
    if xi.is_constant() && remainder.is_constant() && sys.constant_sections() {
        let (lo, hi) = grid.bounds();
        return Ok(Section::constant(grid.clone(), node(0, 0.5 * (lo + hi))?));
    }
    let values = grid.nodes().par_iter().enumerate().map(|(j, &w)| node(j, w)).collect::<Result<Vec<_>>>()?;
    Section::new(grid.clone(), values)
}

/// Iterates `𝒯` from zero until `λ d_n/(1 − λ) ≤ tol`, with `d_n` the
/// dual-norm estimate of successive differences.
pub fn tangent_fixed_point<S: SkewSystem + ?Sized>(
    sys: &S,
    sigma: &Section<AtomicMeasure>,
    tol: f64,
    max_iter: usize,
    compaction: &Compaction,
) -> Result<TangentSection> {
    let lambda = sys.lambda_certificate()?;
    let bank = standard_bank(&sys.fibre_box(), 1, if sigma.dim() == 1 { 24 } else { 48 })?;
    let remainder = remainder_section(sys, sigma, compaction)?;
    let mut xi = Section::<FirstOrderDistribution>::zero(sigma.grid().clone(), sigma.dim());
    let mut distances = Vec::new();
    for _ in 0..max_iter {
        let next = apply_tangent(sys, &xi, &remainder, compaction)?;
        let diff = next.add_scaled(-1.0, &xi)?;
        let d = sup_dual_norm(&diff, &bank, 1)?;
        distances.push(d);
        xi = next;
        if lambda * d / (1.0 - lambda) <= tol {
            let image = apply_tangent(sys, &xi, &remainder, compaction)?;
            let residual = sup_dual_norm(&image.add_scaled(-1.0, &xi)?, &bank, 1)?;
            return Ok(TangentSection { xi, report: ConvergenceReport::from_distances(distances, true), residual });
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, distance: distances.last().copied().unwrap_or(f64::NAN) })
}
