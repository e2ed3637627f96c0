use std::f64::consts::PI;
use std::sync::Arc;

use super::{BaseDensity, SkewSystem, SystemFamily, Variation};
use crate::error::{Error, Result};
use crate::measure::{AffineMap, DomainBox, Point};
use crate::section::OmegaGrid;

/// Doubling map base with fibre maps `g(ω, x) = λx + a cos 2πω` on `[−R, R]`.
#[derive(Clone, Debug)]
pub struct DoublingSystem {
    lambda: f64,
    amplitude: f64,
    grid: OmegaGrid,
    density: BaseDensity,
    bx: DomainBox,
}

/// Smallest symmetric box that is forward invariant for `λ` and amplitude `a`.
pub(crate) fn doubling_radius(lambda: f64, amplitude: f64) -> f64 {
    (amplitude.abs() / (1.0 - lambda)).max(1.0)
}

impl DoublingSystem {
    pub fn new(lambda: f64, amplitude: f64, grid_m: usize, radius: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidArgument(format!("lambda = {lambda} must lie in (0, 1)")));
        }
        if radius < doubling_radius(lambda, amplitude) - 1e-12 {
            return Err(Error::InvalidArgument(format!("fibre box radius {radius} is not invariant")));
        }
        Ok(Self {
            lambda,
            amplitude,
            grid: OmegaGrid::uniform(0.0, 1.0, grid_m)?,
            density: BaseDensity::uniform(0.0, 1.0)?,
            bx: DomainBox::interval(-radius, radius)?,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
}

impl SkewSystem for DoublingSystem {
    fn name(&self) -> String {
        format!("doubling(lambda={}, amplitude={})", self.lambda, self.amplitude)
    }
    fn parameter(&self) -> f64 {
        self.lambda
    }
    fn base_interval(&self) -> (f64, f64) {
        (0.0, 1.0)
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
        0.5 * (omega + i as f64)
    }
    fn inverse_slope(&self, _i: usize, _omega: f64) -> f64 {
        0.5
    }
    fn inverse_dalpha(&self, _i: usize, _omega: f64) -> Option<f64> {
        Some(0.0)
    }
    fn weights(&self, _omega: f64) -> Vec<f64> {
        vec![0.5, 0.5]
    }
    fn weights_domega(&self, _omega: f64) -> Vec<f64> {
        vec![0.0, 0.0]
    }
    fn weights_dalpha(&self, _omega: f64) -> Option<Vec<f64>> {
        Some(vec![0.0, 0.0])
    }
    fn fibre_map(&self, _i: usize, source: f64) -> AffineMap {
        AffineMap::line(self.lambda, self.amplitude * (2.0 * PI * source).cos())
    }
    fn fibre_domega(&self, _i: usize, source: f64, _x: Point) -> Point {
        [-2.0 * PI * self.amplitude * (2.0 * PI * source).sin(), 0.0]
    }
    fn fibre_dalpha(&self, _i: usize, _source: f64, x: Point) -> Option<Point> {
        Some([x[0], 0.0])
    }
    fn forward(&self, i: usize, source: f64) -> f64 {
        2.0 * source - i as f64
    }
    fn derivative_bounds(&self, _i: usize) -> [f64; 3] {
        [self.lambda, 0.0, 0.0]
    }
    fn density(&self) -> &BaseDensity {
        &self.density
    }
}

/// Doubling family in the fibre contraction `λ`. The fibre box is fixed from
/// the base value so that all members share it.
#[derive(Clone, Debug)]
pub struct DoublingFamily {
    pub lambda0: f64,
    pub amplitude: f64,
    pub grid_m: usize,
    radius: f64,
}

/// Family around `λ0` with amplitude `½` and 64 section nodes.
pub fn affine_doubling_test(lambda0: f64) -> Result<DoublingFamily> {
    DoublingFamily::new(lambda0, 0.5, 64)
}

impl DoublingFamily {
    pub fn new(lambda0: f64, amplitude: f64, grid_m: usize) -> Result<Self> {
        if !(lambda0 > 0.0 && lambda0 < 1.0) {
            return Err(Error::InvalidArgument(format!("lambda = {lambda0} must lie in (0, 1)")));
        }
        // margin so that nearby parameters used by difference quotients stay invariant
        let top = (lambda0 + 0.1 * (1.0 - lambda0)).min(0.999);
        let radius = doubling_radius(top, amplitude);
        Ok(Self { lambda0, amplitude, grid_m, radius })
    }

    pub fn at(&self, lambda: f64) -> Result<DoublingSystem> {
        DoublingSystem::new(lambda, self.amplitude, self.grid_m, self.radius)
    }
}

impl SystemFamily for DoublingFamily {
    fn name(&self) -> String {
        format!("doubling in lambda (amplitude={})", self.amplitude)
    }
    fn interval(&self) -> (f64, f64) {
        let top = (self.radius - self.amplitude.abs()) / self.radius;
        (0.0, top.min(1.0))
    }
    fn system(&self, lambda: f64) -> Result<Arc<dyn SkewSystem>> {
        Ok(Arc::new(self.at(lambda)?))
    }
    fn variation(&self) -> Variation {
        Variation { fibre_maps: true, ..Variation::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::FibreMap;

    #[test]
    fn box_is_invariant_across_family() {
        let fam = affine_doubling_test(0.4).unwrap();
        let (_, top) = fam.interval();
        assert!(top > 0.4);
        for lam in [0.35, 0.4, 0.45] {
            let s = fam.at(lam).unwrap();
            let r = s.fibre_box().hi()[0];
            for k in 0..50 {
                let u = k as f64 / 50.0;
                for x in [-r, r] {
                    let y = s.fibre_map(0, u).apply([x, 0.0])[0];
                    assert!(y.abs() <= r + 1e-12);
                }
            }
        }
    }
}
