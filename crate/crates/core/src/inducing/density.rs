use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::linear_fit;
use crate::section::OmegaGrid;
use crate::systems::{singular_quadrature, ulam_density, BaseDensity, Lsv};

/// Settings for the induced and unfolded LSV densities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityOptions {
    /// Uniform grid size on `[½, 1]` for the induced density.
    pub induced_m: usize,
    /// Explicit words `10ⁿ`, `n ≤ n_max`, in the induced Perron–Frobenius
    /// operator; deeper words enter through a tail estimate.
    pub n_max: usize,
    /// Size parameter of the graded grid on `[0, 1]`.
    pub grid_m: usize,
    pub omega_min: f64,
    pub ratio: f64,
    /// Perron–Frobenius residual tolerance of the induced density.
    pub tol: f64,
    pub max_iter: usize,
    /// Cap on the number of terms of the unfolding series at one node.
    pub series_cap: usize,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            induced_m: 2048,
            n_max: 400,
            grid_m: 2048,
            omega_min: 1e-6,
            ratio: 1.1,
            tol: 1e-6,
            max_iter: 500,
            series_cap: 200_000,
        }
    }
}

/// `y_0 = ω`, `y_n = f0^{-1}(y_{n-1})` together with `y_n'`.
pub(crate) fn backward_chain(lsv: &Lsv, omega: f64, n_max: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = Vec::with_capacity(n_max + 1);
    let mut dy = Vec::with_capacity(n_max + 1);
    y.push(omega);
    dy.push(1.0);
    for n in 1..=n_max {
        let u = lsv.left_inverse(y[n - 1]);
        dy.push(dy[n - 1] / lsv.left_derivative(u));
        y.push(u);
    }
    (y, dy)
}

/// Estimate of `Σ_{n>N} y_n'` from `y_N` and `y_N'`. With `S = y^{−α}` the
/// inverse left branch acts as `S ↦ S + a − b/S + O(S^{−2})`, `a = α2^α`,
/// `b = α(α+1)4^α/2`; integrating the derivative of the flow with the
/// midpoint rule gives `y_N' α S (S/S_½)^{1/α} / (a − b/S)`.
pub(crate) fn tail_derivative_sum(lsv: &Lsv, y_n: f64, dy_n: f64) -> f64 {
    if y_n <= 0.0 {
        return 0.0;
    }
    let al = lsv.alpha;
    let c = 2f64.powf(al);
    let a = al * c;
    let b = 0.5 * al * (al + 1.0) * c * c;
    let s = y_n.powf(-al);
    let v = (a - b / s).max(0.5 * a);
    let s_half = s + 0.5 * v;
    dy_n * al * s * (s / s_half).powf(1.0 / al) / v
}

/// Induced density `ρ̄` on `[½, 1]` of the first-return map.
pub fn induced_density(alpha: f64, options: &DensityOptions) -> Result<(BaseDensity, f64)> {
    let lsv = Lsv::new(alpha);
    let grid = OmegaGrid::uniform(0.5, 1.0, options.induced_m)?;
    let n_max = options.n_max;
    let branches = move |w: f64| -> Vec<(f64, f64)> {
        let (y, dy) = backward_chain(&lsv, w, n_max);
        let mut out: Vec<(f64, f64)> = y.iter().zip(&dy).map(|(y, d)| (0.5 * (1.0 + y), 0.5 * d)).collect();
        out.push((0.5, 0.5 * tail_derivative_sum(&lsv, y[n_max], dy[n_max])));
        out
    };
    let res = ulam_density(&grid, &branches, options.max_iter, options.tol)?;
    Ok((res.density, res.residual))
}

/// Unfolded density of the LSV map together with the induced one.
#[derive(Clone, Debug, Serialize)]
pub struct UnfoldedDensity {
    pub alpha: f64,
    pub density: BaseDensity,
    pub induced: BaseDensity,
    /// `E = ∫ τ dη̄`, the normalizer of the unfolding.
    pub normalizer: f64,
    /// Perron–Frobenius residual of the induced density.
    pub induced_residual: f64,
    /// Largest number of series terms used at a node.
    pub max_terms: usize,
}

impl UnfoldedDensity {
    /// Least-squares slope of `log ρ` against `log ω` over grid nodes in `[lo, hi]`.
    pub fn log_slope(&self, lo: f64, hi: f64) -> Result<f64> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .density
            .grid()
            .nodes()
            .iter()
            .zip(self.density.values())
            .filter(|(w, _)| **w >= lo && **w <= hi)
            .map(|(w, r)| (w.ln(), r.ln()))
            .unzip();
        if x.len() < 3 {
            return Err(Error::InsufficientData(format!("{} nodes in [{lo}, {hi}]", x.len())));
        }
        Ok(linear_fit(&x, &y).0)
    }
}

/// `Σ_n ρ̄(Θ_n(ω)) Θ_n'(ω)` for `ω < ½`, with `Θ_n = ½(1 + y_n)`, summed until
/// the tail estimate drops below `1e−3` of the partial sum (or the cap is hit),
/// then completed by the estimate.
pub(crate) fn unfolded_sum(lsv: &Lsv, induced: &BaseDensity, omega: f64, cap: usize) -> (f64, usize) {
    let rho_half = induced.eval(0.5);
    let mut y = omega;
    let mut dy = 1.0;
    let mut sum = 0.0;
    let mut n = 0;
    loop {
        sum += induced.eval(0.5 * (1.0 + y)) * 0.5 * dy;
        let tail = rho_half * 0.5 * tail_derivative_sum(lsv, y, dy);
        if tail <= 1e-3 * sum || n >= cap {
            return (sum + tail, n + 1);
        }
        let u = lsv.left_inverse(y);
        dy /= lsv.left_derivative(u);
        y = u;
        n += 1;
    }
}

/// Invariant density of the LSV map, `ρ = (1/E) Σ_n (ρ̄∘Θ_n) Θ_n'` on
/// `[0, ½)` and `ρ̄/E` on `[½, 1]`, on a grid graded towards `0`.
pub fn unfolded_density(alpha: f64, options: &DensityOptions) -> Result<UnfoldedDensity> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let lsv = Lsv::new(alpha);
    let (induced, induced_residual) = induced_density(alpha, options)?;
    let grid = OmegaGrid::graded(0.0, 1.0, options.grid_m, options.omega_min, options.ratio)?;
    let raw: Vec<(f64, usize)> = grid
        .nodes()
        .par_iter()
        .map(|&w| if w < 0.5 { unfolded_sum(&lsv, &induced, w, options.series_cap) } else { (induced.eval(w), 1) })
        .collect();
    let max_terms = raw.iter().map(|r| r.1).max().unwrap_or(0);
    let values: Vec<f64> = raw.into_iter().map(|r| r.0).collect();
    let normalizer = singular_quadrature(&grid, &values, alpha);
    if !(normalizer > 0.0 && normalizer.is_finite()) {
        return Err(Error::Solver(format!("unfolding normalizer {normalizer}")));
    }
    let rho: Vec<f64> = values.iter().map(|v| v / normalizer).collect();
    let density = BaseDensity::new(grid, rho, alpha)?;
    Ok(UnfoldedDensity { alpha, density, induced, normalizer, induced_residual, max_terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_estimate_matches_long_sum() {
        let lsv = Lsv::new(0.5);
        let (y, dy) = backward_chain(&lsv, 0.7, 20_000);
        let far = tail_derivative_sum(&lsv, y[20_000], dy[20_000]);
        for (n, tol) in [(40, 5e-3), (400, 5e-4)] {
            let exact: f64 = dy[n + 1..].iter().sum::<f64>() + far;
            let est = tail_derivative_sum(&lsv, y[n], dy[n]);
            assert!((exact - est).abs() < tol * est, "n={n}: {exact} {est}");
        }
    }
}
