use serde::Serialize;

use super::density::{backward_chain, induced_density, tail_derivative_sum, DensityOptions};
use crate::error::{Error, Result};
use crate::measure::{AffineMap, DomainBox, Point};
use crate::section::OmegaGrid;
use crate::systems::{solenoid_offset, BaseDensity, BranchEval, Lsv, SkewSystem};

/// Largest tolerated weight mass of the dropped words.
pub const MAX_DROPPED_MASS: f64 = 1e-3;

/// Number of steps for `ω ∈ [½, 1]` to return to `(½, 1]` under the LSV map.
pub fn return_time(alpha: f64, omega: f64) -> Result<u64> {
    const CAP: u64 = 10_000_000;
    if !(0.5..=1.0).contains(&omega) {
        return Err(Error::OutsideBase(omega, 0.5, 1.0));
    }
    Lsv::new(alpha).return_time(omega, CAP).ok_or(Error::Escape { omega, cap: CAP })
}

/// Inverse branch of the induced map for the word `10ⁿ`.
#[derive(Clone, Debug, Serialize)]
pub struct InducedBranch {
    pub word: usize,
    /// `Θ(ω) = ½(1 + f0^{-n}(ω))`.
    pub source: f64,
    pub slope: f64,
    /// Fibre map composed along the excursion, `λ^{n+1}`-contracting.
    pub map: AffineMap,
}

/// Branch of word `n` at `ω`, with a forward check of the composed inverse.
pub fn induced_branch(alpha: f64, lambda_fib: f64, word: usize, omega: f64, tol: f64) -> Result<InducedBranch> {
    let lsv = Lsv::new(alpha);
    let (y, dy) = backward_chain(&lsv, omega, word);
    let source = 0.5 * (1.0 + y[word]);
    let back = induced_forward(&lsv, word, source);
    if (back - omega).abs() > tol {
        return Err(Error::Solver(format!("induced branch {word}: forward check {back} vs {omega}")));
    }
    let map = composed_map(lambda_fib, &y, source);
    Ok(InducedBranch { word, source, slope: 0.5 * dy[word], map })
}

/// `f0ⁿ(2u − 1)`.
pub(crate) fn induced_forward(lsv: &Lsv, word: usize, u: f64) -> f64 {
    let mut y = 2.0 * u - 1.0;
    for _ in 0..word {
        y = lsv.left(y);
    }
    y
}

/// `g_{y_1} ∘ … ∘ g_{y_n} ∘ g_u` for the chain `y` (with `y_0 = ω`).
pub(crate) fn composed_map(lambda: f64, y: &[f64], source: f64) -> AffineMap {
    let mut map = AffineMap::scaled(lambda, solenoid_offset(source));
    for k in (1..y.len()).rev() {
        map = AffineMap::scaled(lambda, solenoid_offset(y[k])).after(&map);
    }
    map
}

/// Weights of the retained words at one base point.
#[derive(Clone, Debug, Serialize)]
pub struct InducedWeights {
    /// `p̄_n = ρ̄(Θ_n) Θ_n' / ρ̄(ω)` for `n ≤ n_max`.
    pub raw: Vec<f64>,
    /// Estimated mass of the words deeper than `n_max`.
    pub dropped: f64,
}

/// First-return skew product of the solenoid over `Ω̄ = [½, 1]`.
#[derive(Clone, Debug)]
pub struct InducedSystem {
    lsv: Lsv,
    lambda: f64,
    n_max: usize,
    grid: OmegaGrid,
    density: BaseDensity,
    density_residual: f64,
    bx: DomainBox,
}

impl InducedSystem {
    /// `n_max = None` picks the smallest depth with dropped mass below
    /// `MAX_DROPPED_MASS / 2` on the section grid.
    pub fn new(
        alpha: f64,
        lambda_fib: f64,
        n_max: Option<usize>,
        section_m: usize,
        density: &DensityOptions,
    ) -> Result<Self> {
        let (rho, residual) = induced_density(alpha, density)?;
        Self::with_density(alpha, lambda_fib, n_max, section_m, rho, residual)
    }

    pub fn with_density(
        alpha: f64,
        lambda_fib: f64,
        n_max: Option<usize>,
        section_m: usize,
        density: BaseDensity,
        density_residual: f64,
    ) -> Result<Self> {
        if !(lambda_fib > 0.0 && lambda_fib < 0.5) {
            return Err(Error::InvalidArgument(format!("lambda_fib = {lambda_fib} must lie in (0, 1/2)")));
        }
        let mut s = Self {
            lsv: Lsv::new(alpha),
            lambda: lambda_fib,
            n_max: n_max.unwrap_or(1),
            grid: OmegaGrid::uniform(0.5, 1.0, section_m)?,
            density,
            density_residual,
            bx: DomainBox::rect([-1.0, -1.0], [1.0, 1.0])?,
        };
        if n_max == Some(0) {
            return Err(Error::InvalidArgument("n_max must be at least 1".into()));
        }
        match n_max {
            Some(_) => {
                let d = s.max_dropped_mass();
                if d > MAX_DROPPED_MASS {
                    return Err(Error::Truncation(format!(
                        "dropped word mass {d:.3e} exceeds {MAX_DROPPED_MASS:e}; increase n_max"
                    )));
                }
            }
            None => {
                while s.max_dropped_mass() > 0.5 * MAX_DROPPED_MASS {
                    s.n_max += 1;
                    if s.n_max > 100_000 {
                        return Err(Error::Truncation("no admissible word depth below 100000".into()));
                    }
                }
            }
        }
        Ok(s)
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }
    pub fn lambda_fib(&self) -> f64 {
        self.lambda
    }
    pub fn alpha(&self) -> f64 {
        self.lsv.alpha
    }
    pub fn lsv(&self) -> Lsv {
        self.lsv
    }
    pub fn density_residual(&self) -> f64 {
        self.density_residual
    }

    /// Same system on a different section grid over `[½, 1]`.
    pub fn with_grid(&self, grid: OmegaGrid) -> Result<Self> {
        if grid.bounds() != (0.5, 1.0) {
            return Err(Error::GridMismatch("induced sections live on [1/2, 1]".into()));
        }
        Ok(Self { grid, ..self.clone() })
    }

    pub fn induced_weights(&self, omega: f64) -> InducedWeights {
        let (y, dy) = backward_chain(&self.lsv, omega, self.n_max);
        let r = self.density.eval(omega);
        let raw = y.iter().zip(&dy).map(|(y, d)| self.density.eval(0.5 * (1.0 + y)) * 0.5 * d / r).collect();
        let dropped =
            self.density.eval(0.5) * 0.5 * tail_derivative_sum(&self.lsv, y[self.n_max], dy[self.n_max]) / r;
        InducedWeights { raw, dropped }
    }

    pub fn max_dropped_mass(&self) -> f64 {
        self.grid.nodes().iter().map(|&w| self.induced_weights(w).dropped).fold(0.0, f64::max)
    }

    /// Induced fibre map of word `n` as a function of its source point.
    pub fn fibre_map_from_source(&self, word: usize, u: f64) -> AffineMap {
        let mut y = vec![0.0; word + 1];
        let mut v = 2.0 * u - 1.0;
        for k in (1..=word).rev() {
            y[k] = v;
            v = self.lsv.left(v);
        }
        y[0] = v;
        composed_map(self.lambda, &y, u)
    }
}

impl SkewSystem for InducedSystem {
    fn name(&self) -> String {
        format!("induced solenoid(alpha={}, lambda_fib={}, n_max={})", self.lsv.alpha, self.lambda, self.n_max)
    }
    fn parameter(&self) -> f64 {
        self.lsv.alpha
    }
    fn base_interval(&self) -> (f64, f64) {
        (0.5, 1.0)
    }
    fn fibre_box(&self) -> DomainBox {
        self.bx
    }
    fn grid(&self) -> &OmegaGrid {
        &self.grid
    }
    fn branch_count(&self) -> usize {
        self.n_max + 1
    }
    fn inverse(&self, i: usize, omega: f64) -> f64 {
        let (y, _) = backward_chain(&self.lsv, omega, i);
        0.5 * (1.0 + y[i])
    }
    fn inverse_slope(&self, i: usize, omega: f64) -> f64 {
        let (_, dy) = backward_chain(&self.lsv, omega, i);
        0.5 * dy[i]
    }
    /// Retained weights with the dropped mass lumped on the deepest word.
    fn weights(&self, omega: f64) -> Vec<f64> {
        let mut w = self.induced_weights(omega).raw;
        let deficit = 1.0 - w.iter().sum::<f64>();
        *w.last_mut().expect("at least one word") += deficit;
        w
    }
    fn fibre_map(&self, i: usize, source: f64) -> AffineMap {
        self.fibre_map_from_source(i, source)
    }
    fn fibre_domega(&self, i: usize, source: f64, x: Point) -> Point {
        use crate::measure::FibreMap;
        let h = 1e-7;
        let a = (source - h).max(0.5);
        let b = (source + h).min(1.0);
        let pa = self.fibre_map_from_source(i, a).apply(x);
        let pb = self.fibre_map_from_source(i, b).apply(x);
        [(pb[0] - pa[0]) / (b - a), (pb[1] - pa[1]) / (b - a)]
    }
    fn forward(&self, i: usize, source: f64) -> f64 {
        induced_forward(&self.lsv, i, source)
    }
    fn derivative_bounds(&self, i: usize) -> [f64; 3] {
        [self.lambda.powi(i as i32 + 1), 0.0, 0.0]
    }
    fn density(&self) -> &BaseDensity {
        &self.density
    }
    fn branches(&self, omega: f64) -> Vec<BranchEval> {
        let (y, dy) = backward_chain(&self.lsv, omega, self.n_max);
        let r = self.density.eval(omega);
        let mut out: Vec<BranchEval> = (0..=self.n_max)
            .map(|n| {
                let source = 0.5 * (1.0 + y[n]);
                BranchEval {
                    index: n,
                    source,
                    slope: 0.5 * dy[n],
                    weight: self.density.eval(source) * 0.5 * dy[n] / r,
                    map: composed_map(self.lambda, &y[..=n], source),
                }
            })
            .collect();
        let deficit = 1.0 - out.iter().map(|b| b.weight).sum::<f64>();
        out.last_mut().expect("at least one word").weight += deficit;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn return_time_examples() {
        assert_eq!(return_time(0.5, 0.8).unwrap(), 1);
        assert_eq!(return_time(0.3, 0.75).unwrap(), 2);
        assert_eq!(return_time(0.9, 0.75).unwrap(), 2);
        assert_eq!(return_time(0.5, 1.0).unwrap(), 1);
        assert!(return_time(0.5, 0.2).is_err());
    }

    #[test]
    fn branch_examples() {
        let b = induced_branch(0.5, 0.3, 0, 0.6, 1e-9).unwrap();
        assert!((b.source - 0.8).abs() < 1e-15);
        let b = induced_branch(0.5, 0.3, 1, 1.0, 1e-9).unwrap();
        assert!((b.source - 0.75).abs() < 1e-12);
        let lip = b.map.lipschitz();
        assert!((lip - 0.09).abs() < 1e-12);
    }

    #[test]
    fn map_from_source_agrees_with_chain() {
        let opts = DensityOptions { induced_m: 257, ..DensityOptions::default() };
        let s = InducedSystem::new(0.5, 0.3, None, 17, &opts).unwrap();
        for br in s.branches(0.83) {
            let m = s.fibre_map_from_source(br.index, br.source);
            assert!((m.b[0] - br.map.b[0]).abs() < 1e-9 && (m.b[1] - br.map.b[1]).abs() < 1e-9);
        }
    }
}
