use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use super::{BaseDensity, Lsv, SkewSystem, SystemFamily, Variation};
use crate::error::{Error, Result};
use crate::inducing::{unfolded_density, DensityOptions, UnfoldedDensity};
use crate::measure::{AffineMap, DomainBox, Point};
use crate::section::OmegaGrid;

/// Numerical settings of the solenoid over the LSV base.
#[derive(Clone, Debug, PartialEq)]
pub struct SolenoidOptions {
    pub lambda_fib: f64,
    /// Section grid: `m` nodes graded from `section_start` with `section_ratio`.
    pub section_m: usize,
    pub section_start: f64,
    pub section_ratio: f64,
    pub density: DensityOptions,
}

impl SolenoidOptions {
    pub fn new(lambda_fib: f64) -> Self {
        Self { lambda_fib, section_m: 33, section_start: 1e-3, section_ratio: 1.5, density: DensityOptions::default() }
    }

    pub fn section_grid(&self) -> Result<OmegaGrid> {
        OmegaGrid::graded(0.0, 1.0, self.section_m, self.section_start, self.section_ratio)
    }
}

/// Skew product over the LSV map with fibre maps
/// `g(ω, x) = (½ cos 2πω, ½ sin 2πω) + λ x` on `[−1, 1]²`.
#[derive(Clone, Debug)]
pub struct SolenoidSystem {
    lsv: Lsv,
    lambda: f64,
    grid: OmegaGrid,
    unfolded: Arc<UnfoldedDensity>,
    density: BaseDensity,
    bx: DomainBox,
}

impl SolenoidSystem {
    pub fn new(alpha: f64, options: &SolenoidOptions) -> Result<Self> {
        let unfolded = Arc::new(unfolded_density(alpha, &options.density)?);
        Self::with_density(alpha, options, unfolded)
    }

    pub fn with_density(alpha: f64, options: &SolenoidOptions, unfolded: Arc<UnfoldedDensity>) -> Result<Self> {
        check_parameters(alpha, options.lambda_fib)?;
        Ok(Self {
            lsv: Lsv::new(alpha),
            lambda: options.lambda_fib,
            grid: options.section_grid()?,
            density: unfolded.density.clone(),
            unfolded,
            bx: DomainBox::rect([-1.0, -1.0], [1.0, 1.0])?,
        })
    }

    /// Same system with `ρ̇` attached, which enables `∂_α p_i`.
    pub fn with_density_derivative(&self, rho_dot: Vec<f64>) -> Result<Self> {
        let mut s = self.clone();
        s.density = s.density.with_derivative(rho_dot)?;
        Ok(s)
    }

    pub fn alpha(&self) -> f64 {
        self.lsv.alpha
    }
    pub fn lambda_fib(&self) -> f64 {
        self.lambda
    }
    pub fn lsv(&self) -> Lsv {
        self.lsv
    }
    pub fn unfolded(&self) -> &UnfoldedDensity {
        &self.unfolded
    }

    fn right_weight(&self, omega: f64) -> f64 {
        let r = self.density.eval(omega);
        let p = 0.5 * self.density.eval(self.lsv.right_inverse(omega)) / r;
        if p.is_finite() {
            p.clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

fn check_parameters(alpha: f64, lambda: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if !(lambda > 0.0 && lambda < 0.5) {
        return Err(Error::InvalidArgument(format!("lambda_fib = {lambda} must lie in (0, 1/2)")));
    }
    Ok(())
}

pub(crate) fn solenoid_offset(u: f64) -> Point {
    let t = 2.0 * PI * u;
    [0.5 * t.cos(), 0.5 * t.sin()]
}

impl SkewSystem for SolenoidSystem {
    fn name(&self) -> String {
        format!("solenoid(alpha={}, lambda_fib={})", self.lsv.alpha, self.lambda)
    }
    fn parameter(&self) -> f64 {
        self.lsv.alpha
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
        if i == 0 {
            self.lsv.left_inverse(omega)
        } else {
            self.lsv.right_inverse(omega)
        }
    }
    fn inverse_slope(&self, i: usize, omega: f64) -> f64 {
        if i == 0 {
            1.0 / self.lsv.left_derivative(self.lsv.left_inverse(omega))
        } else {
            0.5
        }
    }
    fn inverse_dalpha(&self, i: usize, omega: f64) -> Option<f64> {
        if i == 0 {
            let u = self.lsv.left_inverse(omega);
            Some(-self.lsv.left_dalpha(u) / self.lsv.left_derivative(u))
        } else {
            Some(0.0)
        }
    }
    fn weights(&self, omega: f64) -> Vec<f64> {
        let p1 = self.right_weight(omega);
        vec![1.0 - p1, p1]
    }
    fn weights_dalpha(&self, omega: f64) -> Option<Vec<f64>> {
        let d = &self.density;
        let u = self.lsv.right_inverse(omega);
        let r = d.eval(omega);
        let dp = 0.5 * (d.eval_derivative(u)? * r - d.eval(u) * d.eval_derivative(omega)?) / (r * r);
        Some(vec![-dp, dp])
    }
    fn fibre_map(&self, _i: usize, source: f64) -> AffineMap {
        AffineMap::scaled(self.lambda, solenoid_offset(source))
    }
    fn fibre_domega(&self, _i: usize, source: f64, _x: Point) -> Point {
        let t = 2.0 * PI * source;
        [-PI * t.sin(), PI * t.cos()]
    }
    fn fibre_dalpha(&self, _i: usize, _source: f64, _x: Point) -> Option<Point> {
        Some([0.0, 0.0])
    }
    fn forward(&self, i: usize, source: f64) -> f64 {
        if i == 0 {
            self.lsv.left(source)
        } else {
            2.0 * source - 1.0
        }
    }
    fn derivative_bounds(&self, _i: usize) -> [f64; 3] {
        [self.lambda, 0.0, 0.0]
    }
    fn density(&self) -> &BaseDensity {
        &self.density
    }
}

/// Solenoid family in the LSV exponent `α`. Members are cached because each
/// one carries an unfolded base density.
pub struct SolenoidFamily {
    pub options: SolenoidOptions,
    cache: Mutex<BTreeMap<u64, Arc<SolenoidSystem>>>,
}

/// Family with default numerical settings; `α` is validated here.
pub fn intermittent_solenoid(alpha: f64, lambda_fib: f64) -> Result<SolenoidFamily> {
    check_parameters(alpha, lambda_fib)?;
    Ok(SolenoidFamily::new(SolenoidOptions::new(lambda_fib)))
}

impl SolenoidFamily {
    pub fn new(options: SolenoidOptions) -> Self {
        Self { options, cache: Mutex::new(BTreeMap::new()) }
    }

    pub fn at(&self, alpha: f64) -> Result<Arc<SolenoidSystem>> {
        if let Some(s) = self.cache.lock().expect("cache poisoned").get(&alpha.to_bits()) {
            return Ok(s.clone());
        }
        let s = Arc::new(SolenoidSystem::new(alpha, &self.options)?);
        self.cache.lock().expect("cache poisoned").insert(alpha.to_bits(), s.clone());
        Ok(s)
    }

    /// System at `α0` with the finite-difference density derivative attached.
    pub fn with_derivative(&self, alpha0: f64, eps: f64) -> Result<Arc<SolenoidSystem>> {
        let base = self.at(alpha0)?;
        let grid = base.density().grid().clone();
        let rho_dot = self.density_derivative(alpha0, eps, &grid)?;
        Ok(Arc::new(base.with_density_derivative(rho_dot)?))
    }
}

impl SystemFamily for SolenoidFamily {
    fn name(&self) -> String {
        format!("solenoid in alpha (lambda_fib={})", self.options.lambda_fib)
    }
    fn interval(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn system(&self, alpha: f64) -> Result<Arc<dyn SkewSystem>> {
        Ok(self.at(alpha)?)
    }
    fn variation(&self) -> Variation {
        Variation { weights: true, branches: true, fibre_maps: false, base_density: true }
    }
}
