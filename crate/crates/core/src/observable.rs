//! Observables `Φ(ω, x)` on the skew product.

use serde::{Deserialize, Serialize};

use crate::measure::{Mat2, Point, TestFunction};

/// Built-in observables. In dimension one `x₁ = x` and `|x|² = x²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// `Φ ≡ 1`.
    One,
    /// `x₁`.
    X,
    /// `|x|²`.
    XSquared,
    /// `ω`.
    Omega,
    /// `ω x₁`.
    OmegaX,
    /// `cos(πω) x₁`.
    CosPiOmegaX,
    /// `ω + x₁`.
    OmegaPlusX,
}

impl Observable {
    pub const ALL: [Observable; 7] = [
        Observable::One,
        Observable::X,
        Observable::XSquared,
        Observable::Omega,
        Observable::OmegaX,
        Observable::CosPiOmegaX,
        Observable::OmegaPlusX,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Observable::One => "one",
            Observable::X => "x",
            Observable::XSquared => "x_squared",
            Observable::Omega => "omega",
            Observable::OmegaX => "omega_x",
            Observable::CosPiOmegaX => "cos_pi_omega_x",
            Observable::OmegaPlusX => "omega_plus_x",
        }
    }

    pub fn value(&self, omega: f64, x: Point) -> f64 {
        match self {
            Observable::One => 1.0,
            Observable::X => x[0],
            Observable::XSquared => x[0] * x[0] + x[1] * x[1],
            Observable::Omega => omega,
            Observable::OmegaX => omega * x[0],
            Observable::CosPiOmegaX => (std::f64::consts::PI * omega).cos() * x[0],
            Observable::OmegaPlusX => omega + x[0],
        }
    }

    /// Gradient in `x`.
    pub fn gradient(&self, omega: f64, x: Point) -> Point {
        match self {
            Observable::One | Observable::Omega => [0.0, 0.0],
            Observable::X | Observable::OmegaPlusX => [1.0, 0.0],
            Observable::XSquared => [2.0 * x[0], 2.0 * x[1]],
            Observable::OmegaX => [omega, 0.0],
            Observable::CosPiOmegaX => [(std::f64::consts::PI * omega).cos(), 0.0],
        }
    }

    /// `Φ(ω, ·)` as a fibre test function.
    pub fn at(&self, omega: f64) -> ObservableSlice {
        ObservableSlice { observable: *self, omega }
    }
}

/// `x ↦ Φ(ω, x)` for a fixed `ω`.
#[derive(Clone, Copy, Debug)]
pub struct ObservableSlice {
    pub observable: Observable,
    pub omega: f64,
}

impl TestFunction for ObservableSlice {
    fn value(&self, x: Point) -> f64 {
        self.observable.value(self.omega, x)
    }
    fn gradient(&self, x: Point) -> Point {
        self.observable.gradient(self.omega, x)
    }
    fn hessian(&self, _x: Point) -> Mat2 {
        match self.observable {
            Observable::XSquared => [[2.0, 0.0], [0.0, 2.0]],
            _ => [[0.0; 2]; 2],
        }
    }
    /// Not certified: observables are not normalized members of a test bank.
    fn derivative_bounds(&self) -> [f64; 3] {
        [f64::INFINITY; 3]
    }
}
