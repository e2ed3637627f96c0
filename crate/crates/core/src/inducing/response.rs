//! Response of the solenoid through the inducing scheme:
//! `ν̇ = 𝒰̇ν̄* + 𝒰(ν̄̇)` with `ν̄̇` the sample derivative of the induced system.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::density::DensityOptions;
use super::induced::InducedSystem;
use super::unfold::{unfold, unfold_difference, unfold_signed, UnfoldOptions, UnfoldReport};
use crate::error::{Error, Result};
use crate::measure::Compaction;
use crate::observable::Observable;
use crate::response::{default_bank, density_term, neumann_resolvent, node_pairings, response_seed, SeedScheme};
use crate::systems::{SkewSystem, SolenoidFamily, SystemFamily, Variation};
use crate::transfer::{fixed_point, FixedPointOptions};

/// Induced systems in `α` with a common word depth and section grid.
pub struct InducedFamily {
    pub lambda_fib: f64,
    pub n_max: usize,
    pub section_m: usize,
    pub density: DensityOptions,
    cache: Mutex<BTreeMap<u64, Arc<InducedSystem>>>,
}

impl InducedFamily {
    /// The word depth is the one chosen automatically at `α0`.
    pub fn new(alpha0: f64, lambda_fib: f64, section_m: usize, density: DensityOptions) -> Result<Self> {
        let base = InducedSystem::new(alpha0, lambda_fib, None, section_m, &density)?;
        let cache = Mutex::new(BTreeMap::from([(alpha0.to_bits(), Arc::new(base.clone()))]));
        Ok(Self { lambda_fib, n_max: base.n_max(), section_m, density, cache })
    }

    pub fn at(&self, alpha: f64) -> Result<Arc<InducedSystem>> {
        if let Some(s) = self.cache.lock().expect("cache poisoned").get(&alpha.to_bits()) {
            return Ok(s.clone());
        }
        let s = Arc::new(InducedSystem::new(alpha, self.lambda_fib, Some(self.n_max), self.section_m, &self.density)?);
        self.cache.lock().expect("cache poisoned").insert(alpha.to_bits(), s.clone());
        Ok(s)
    }
}

impl SystemFamily for InducedFamily {
    fn name(&self) -> String {
        format!("induced solenoid in alpha (lambda_fib={}, n_max={})", self.lambda_fib, self.n_max)
    }
    fn interval(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn system(&self, alpha: f64) -> Result<Arc<dyn SkewSystem>> {
        Ok(self.at(alpha)?)
    }
    fn variation(&self) -> Variation {
        Variation { weights: true, branches: true, fibre_maps: true, base_density: true }
    }
}

/// Settings of [`induced_response`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InducedResponseOptions {
    /// Step of the seed and of the unfolding derivative.
    pub eps: f64,
    pub scheme: SeedScheme,
    /// Tolerance of the Neumann tail bound on the induced system.
    pub tol: f64,
    pub fixed_point: FixedPointOptions,
    pub signed: Compaction,
    pub unfold: UnfoldOptions,
    pub density_eps: f64,
    /// Uniform section grid size on `[½, 1]`.
    pub section_m: usize,
}

impl InducedResponseOptions {
    pub fn new(budget: usize) -> Self {
        Self {
            eps: 1e-2,
            scheme: SeedScheme::Central,
            tol: 1e-6,
            fixed_point: FixedPointOptions::new(1e-8, 200, Compaction::new(budget)),
            signed: Compaction::new(budget),
            unfold: UnfoldOptions::new(Compaction::new(budget)),
            density_eps: 1e-2,
            section_m: 33,
        }
    }
}

/// Terms of the response assembled through the inducing scheme.
#[derive(Clone, Debug, Serialize)]
pub struct InducedResponse {
    pub observable: Observable,
    pub alpha0: f64,
    pub epsilon: f64,
    /// `∫ ⟨(𝒰̇ν̄*)_ω, Φ(ω, ·)⟩ dη`.
    pub unfolding_term: f64,
    /// `∫ ⟨(𝒰ν̄̇)_ω, Φ(ω, ·)⟩ dη`.
    pub induced_term: f64,
    /// `∫ ψ dη̇` with `ψ(ω) = ⟨(𝒰ν̄*)_ω, Φ(ω, ·)⟩`.
    pub density_term: f64,
    pub value: f64,
    pub tail_bound: f64,
    pub neumann_terms: usize,
    pub induced_iterations: usize,
    pub n_max: usize,
    pub unfold: UnfoldReport,
}

/// `d/dα ∫ Φ dμ_α` of the solenoid at `α0` from the induced sample
/// derivative and a difference quotient of the unfolding operator.
pub fn induced_response(
    family: &SolenoidFamily,
    alpha0: f64,
    observable: Observable,
    options: &InducedResponseOptions,
) -> Result<InducedResponse> {
    if !(options.eps > 0.0) {
        return Err(Error::InvalidArgument("response step must be positive".into()));
    }
    let full = family.at(alpha0)?;
    let grid = full.grid().clone();
    let density = full.density().clone();
    let ifam = InducedFamily::new(alpha0, family.options.lambda_fib, options.section_m, family.options.density.clone())?;
    let base = ifam.at(alpha0)?;
    let fp = fixed_point(base.as_ref(), &options.fixed_point, None)?;
    let seed = response_seed(&ifam, alpha0, options.eps, options.scheme, &fp.section, &options.signed)?;
    let bank = default_bank(base.as_ref())?;
    let derivative = neumann_resolvent(base.as_ref(), &seed.tau, options.tol, &options.signed, &bank)?;

    let (unfolded, report) = unfold(&base, &fp.section, &grid, &density, &options.unfold)?;
    let (udot, _) = match options.scheme {
        SeedScheme::Forward => {
            let plus = ifam.at(alpha0 + options.eps)?;
            unfold_difference(&plus, &base, &fp.section, &grid, &options.unfold, 1.0 / options.eps)?
        }
        SeedScheme::Central => {
            let plus = ifam.at(alpha0 + options.eps)?;
            let minus = ifam.at(alpha0 - options.eps)?;
            unfold_difference(&plus, &minus, &fp.section, &grid, &options.unfold, 0.5 / options.eps)?
        }
    };
    let (lifted, _) = unfold_signed(&base, &derivative.nu_dot, &grid, &density, &options.unfold)?;

    let unfolding_term = density.integrate_nodes(&grid, &node_pairings(&udot, observable))?;
    let induced_term = density.integrate_nodes(&grid, &node_pairings(&lifted, observable))?;
    let density_term = density_term(family, alpha0, options.density_eps, &unfolded, observable)?;
    Ok(InducedResponse {
        observable,
        alpha0,
        epsilon: options.eps,
        unfolding_term,
        induced_term,
        density_term,
        value: unfolding_term + induced_term + density_term,
        tail_bound: derivative.tail_bound,
        neumann_terms: derivative.terms,
        induced_iterations: fp.report.iterations,
        n_max: ifam.n_max,
        unfold: report,
    })
}
