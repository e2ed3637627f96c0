use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BaseDensity, SkewSystem, SystemFamily, Variation};
use crate::error::{Error, Result};
use crate::measure::{AffineMap, DomainBox, Point};
use crate::section::OmegaGrid;

/// Which Bernoulli coefficient plays the role of the family parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BernoulliParameter {
    Alpha,
    Beta,
}

/// Random affine iteration `x ↦ αx ± (1 − α)` driven by the piecewise linear
/// base map with cut point `2β − 1` on `Ω = X = [−1, 1]`. The left branch,
/// of weight `β`, carries the shift `+(1 − α)`, so that the fibre marginal is
/// the law of `(1 − α) Σ aₙ αⁿ` with `P(aₙ = 1) = β`.
#[derive(Clone, Debug)]
pub struct BernoulliSystem {
    alpha: f64,
    beta: f64,
    parameter: BernoulliParameter,
    grid: OmegaGrid,
    density: BaseDensity,
    bx: DomainBox,
}

impl BernoulliSystem {
    pub fn new(alpha: f64, beta: f64, parameter: BernoulliParameter) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidArgument(format!("beta = {beta} must lie in (0, 1)")));
        }
        Ok(Self {
            alpha,
            beta,
            parameter,
            grid: OmegaGrid::uniform(-1.0, 1.0, 1)?,
            density: BaseDensity::uniform(-1.0, 1.0)?,
            bx: DomainBox::interval(-1.0, 1.0)?,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Base map `f_β`.
    pub fn base_map(&self, omega: f64) -> f64 {
        let b = self.beta;
        if omega <= 2.0 * b - 1.0 {
            (omega + 1.0 - b) / b
        } else {
            (omega - b) / (1.0 - b)
        }
    }
}

impl SkewSystem for BernoulliSystem {
    fn name(&self) -> String {
        format!("bernoulli(alpha={}, beta={})", self.alpha, self.beta)
    }
    fn parameter(&self) -> f64 {
        match self.parameter {
            BernoulliParameter::Alpha => self.alpha,
            BernoulliParameter::Beta => self.beta,
        }
    }
    fn base_interval(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }
    fn fibre_box(&self) -> DomainBox {
        self.bx
    }
    fn grid(&self) -> &OmegaGrid {
        &self.grid
    }
    fn branch_count(&self) -> usize {
        2
    }
    fn inverse(&self, i: usize, omega: f64) -> f64 {
        let b = self.beta;
        if i == 0 {
            b * omega + b - 1.0
        } else {
            (1.0 - b) * omega + b
        }
    }
    fn inverse_slope(&self, i: usize, _omega: f64) -> f64 {
        if i == 0 {
            self.beta
        } else {
            1.0 - self.beta
        }
    }
    fn inverse_dalpha(&self, i: usize, omega: f64) -> Option<f64> {
        Some(match self.parameter {
            BernoulliParameter::Alpha => 0.0,
            BernoulliParameter::Beta if i == 0 => omega + 1.0,
            BernoulliParameter::Beta => 1.0 - omega,
        })
    }
    fn weights(&self, _omega: f64) -> Vec<f64> {
        vec![self.beta, 1.0 - self.beta]
    }
    fn weights_domega(&self, _omega: f64) -> Vec<f64> {
        vec![0.0, 0.0]
    }
    fn weights_dalpha(&self, _omega: f64) -> Option<Vec<f64>> {
        Some(match self.parameter {
            BernoulliParameter::Alpha => vec![0.0, 0.0],
            BernoulliParameter::Beta => vec![1.0, -1.0],
        })
    }
    fn fibre_map(&self, i: usize, _source: f64) -> AffineMap {
        let c = 1.0 - self.alpha;
        AffineMap::line(self.alpha, if i == 0 { c } else { -c })
    }
    fn fibre_dalpha(&self, i: usize, _source: f64, x: Point) -> Option<Point> {
        Some(match self.parameter {
            BernoulliParameter::Alpha if i == 0 => [x[0] - 1.0, 0.0],
            BernoulliParameter::Alpha => [x[0] + 1.0, 0.0],
            BernoulliParameter::Beta => [0.0, 0.0],
        })
    }
    fn forward(&self, i: usize, source: f64) -> f64 {
        let b = self.beta;
        if i == 0 {
            (source + 1.0 - b) / b
        } else {
            (source - b) / (1.0 - b)
        }
    }
    fn derivative_bounds(&self, _i: usize) -> [f64; 3] {
        [self.alpha, 0.0, 0.0]
    }
    fn density(&self) -> &BaseDensity {
        &self.density
    }
    fn constant_sections(&self) -> bool {
        true
    }
}

/// Bernoulli family varying in `α` (with `β` fixed) or in `β` (with `α` fixed).
#[derive(Clone, Copy, Debug)]
pub struct BernoulliFamily {
    pub alpha: f64,
    pub beta: f64,
    pub parameter: BernoulliParameter,
}

/// Validates the fixed coefficients and returns the family.
pub fn bernoulli_convolution(alpha: f64, beta: f64, parameter: BernoulliParameter) -> Result<BernoulliFamily> {
    BernoulliSystem::new(alpha, beta, parameter)?;
    Ok(BernoulliFamily { alpha, beta, parameter })
}

impl BernoulliFamily {
    pub fn at(&self, value: f64) -> Result<BernoulliSystem> {
        match self.parameter {
            BernoulliParameter::Alpha => BernoulliSystem::new(value, self.beta, self.parameter),
            BernoulliParameter::Beta => BernoulliSystem::new(self.alpha, value, self.parameter),
        }
    }
}

impl SystemFamily for BernoulliFamily {
    fn name(&self) -> String {
        match self.parameter {
            BernoulliParameter::Alpha => format!("bernoulli in alpha (beta={})", self.beta),
            BernoulliParameter::Beta => format!("bernoulli in beta (alpha={})", self.alpha),
        }
    }
    fn interval(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn system(&self, value: f64) -> Result<Arc<dyn SkewSystem>> {
        Ok(Arc::new(self.at(value)?))
    }
    fn variation(&self) -> Variation {
        match self.parameter {
            BernoulliParameter::Alpha => Variation { fibre_maps: true, ..Variation::default() },
            BernoulliParameter::Beta => Variation { weights: true, branches: true, ..Variation::default() },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branches_invert_base_map() {
        let s = BernoulliSystem::new(0.5, 0.3, BernoulliParameter::Beta).unwrap();
        for k in 0..=20 {
            let w = -1.0 + 0.1 * k as f64;
            for i in 0..2 {
                let u = s.inverse(i, w);
                assert!((s.base_map(u) - w).abs() < 1e-12 || (i == 0 && (w - 1.0).abs() < 1e-12));
                assert!((s.forward(i, u) - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(BernoulliSystem::new(1.0, 0.5, BernoulliParameter::Alpha).is_err());
        assert!(BernoulliSystem::new(0.5, 0.0, BernoulliParameter::Alpha).is_err());
    }
}
