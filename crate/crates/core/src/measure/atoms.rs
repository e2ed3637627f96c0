use super::bank::TestFunction;
use super::compact::{self, CompactionMode};
use super::{mat_vec, DomainBox, FibreMap, Point};
use crate::error::{Error, Result};
use crate::numeric::{csum, Compensated};

/// Tolerance on total mass for probability measures and on the zero mass of
/// measures vanishing on constants (relative to the total variation).
pub const MASS_TOL: f64 = 1e-12;

/// Common interface of the three fibre-measure representations.
pub trait FibreMeasure: Clone + Send + Sync + std::fmt::Debug + 'static {
    const KIND: &'static str;

    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn points(&self) -> &[Point];
    fn weights(&self) -> &[f64];
    /// Cotangent weights of first-order distributions.
    fn cotangent_weights(&self) -> Option<&[Point]> {
        None
    }
    /// Whether the measure is declared to annihilate constants; `None` for
    /// probability measures.
    fn annihilates_constants(&self) -> Option<bool> {
        None
    }

    fn mass(&self) -> f64 {
        csum(self.weights().iter().copied())
    }

    /// Total variation `Σ |w|` of the scalar weights.
    fn variation(&self) -> f64 {
        csum(self.weights().iter().map(|w| w.abs()))
    }

    /// `h_* μ`; images must stay inside `bx`.
    fn push_forward(&self, h: &dyn FibreMap, bx: &DomainBox) -> Result<Self>;

    /// `⟨μ, φ⟩`, exact (no quadrature).
    fn pair(&self, phi: &dyn TestFunction) -> f64;

    /// `Σ_k c_k (h_k)_* μ_k` with atoms concatenated in term order.
    fn push_combine(dim: usize, terms: &[(f64, &Self, &dyn FibreMap)], bx: &DomainBox) -> Result<Self>;

    /// `Σ_k c_k μ_k` with atoms concatenated in term order.
    fn combine(dim: usize, terms: &[(f64, &Self)]) -> Self;

    /// Reduces the atom count to at most `budget`. Returns the compacted
    /// measure and a bound on the transport (dual-Lipschitz) error.
    fn compact(&self, budget: usize, mode: CompactionMode, bx: &DomainBox) -> Result<(Self, f64)>;

    fn default_mode(dim: usize) -> CompactionMode;

    /// Restores the mass invariant of the kind after floating-point drift.
    /// Returns the drift that was removed.
    fn restore_mass(&mut self) -> f64;
}

fn pad(dim: usize, x: Point) -> Point {
    if dim == 1 {
        [x[0], 0.0]
    } else {
        x
    }
}

fn push_points(points: &[Point], h: &dyn FibreMap, bx: &DomainBox) -> Result<Vec<Point>> {
    points
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = pad(bx.dim(), h.apply(x));
            bx.check(i, y).map(|_| y)
        })
        .collect()
}

fn pair_scalar(points: &[Point], w: &[f64], phi: &dyn TestFunction) -> f64 {
    let mut acc = Compensated::new();
    for (x, &wi) in points.iter().zip(w) {
        acc.add(wi * phi.value(*x));
    }
    acc.value()
}

fn check_points(dim: usize, points: &[Point], n: usize) -> Result<()> {
    if dim != 1 && dim != 2 {
        return Err(Error::InvalidArgument(format!("fibre dimension {dim} not in {{1, 2}}")));
    }
    if points.len() != n {
        return Err(Error::InvalidArgument("points and weights differ in length".into()));
    }
    for (i, x) in points.iter().enumerate() {
        if !x[0].is_finite() || !x[1].is_finite() || (dim == 1 && x[1] != 0.0) {
            return Err(Error::InvalidArgument(format!("atom {i} has an invalid location")));
        }
    }
    Ok(())
}

/// Finitely supported Borel probability measure on the fibre box.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicMeasure {
    dim: usize,
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl AtomicMeasure {
    /// Validates non-negative weights summing to one within [`MASS_TOL`].
    pub fn new(dim: usize, points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        check_points(dim, &points, weights.len())?;
        if weights.is_empty() {
            return Err(Error::InvalidArgument("probability measure needs an atom".into()));
        }
        if let Some(i) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("atom {i} has a negative or non-finite weight")));
        }
        let m = csum(weights.iter().copied());
        if (m - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!("total mass {m} differs from 1")));
        }
        Ok(Self { dim, points, weights })
    }

    /// Like [`AtomicMeasure::new`] but divides by the total mass first.
    pub fn normalized(dim: usize, points: Vec<Point>, mut weights: Vec<f64>) -> Result<Self> {
        let m = csum(weights.iter().copied());
        if !(m > 0.0) {
            return Err(Error::InvalidArgument("non-positive total mass".into()));
        }
        weights.iter_mut().for_each(|w| *w /= m);
        let mut out = Self { dim, points, weights };
        check_points(dim, &out.points, out.weights.len())?;
        out.restore_mass();
        Ok(out)
    }

    pub fn dirac(dim: usize, x: Point) -> Self {
        Self { dim, points: vec![pad(dim, x)], weights: vec![1.0] }
    }

    /// Equal weights on the given points.
    pub fn uniform(dim: usize, points: Vec<Point>) -> Result<Self> {
        let n = points.len();
        Self::normalized(dim, points, vec![1.0; n])
    }

    /// Convex combination `Σ c_k μ_k`; the coefficients must be non-negative
    /// and sum to one.
    pub fn mix(terms: &[(f64, &AtomicMeasure)]) -> Result<Self> {
        let dim = terms.first().map(|t| t.1.dim).ok_or_else(|| Error::InvalidArgument("empty mixture".into()))?;
        if terms.iter().any(|t| !(t.0 >= 0.0) || t.1.dim != dim) {
            return Err(Error::InvalidArgument("mixture weights must be non-negative".into()));
        }
        let s = csum(terms.iter().map(|t| t.0));
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {s}")));
        }
        let mut out = <Self as FibreMeasure>::combine(dim, terms);
        out.restore_mass();
        Ok(out)
    }

    /// Mean of `f` under the measure.
    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        let mut acc = Compensated::new();
        for (x, w) in self.points.iter().zip(&self.weights) {
            acc.add(w * f(*x));
        }
        acc.value()
    }

    /// First moment of each coordinate.
    pub fn mean(&self) -> Point {
        [self.integrate(|x| x[0]), self.integrate(|x| x[1])]
    }

    pub fn to_signed(&self) -> SignedAtomicMeasure {
        SignedAtomicMeasure {
            dim: self.dim,
            points: self.points.clone(),
            weights: self.weights.clone(),
            vanishes_on_constants: false,
        }
    }
}

impl FibreMeasure for AtomicMeasure {
    const KIND: &'static str = "probability";

    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.weights.len()
    }
    fn points(&self) -> &[Point] {
        &self.points
    }
    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn push_forward(&self, h: &dyn FibreMap, bx: &DomainBox) -> Result<Self> {
        Ok(Self { dim: self.dim, points: push_points(&self.points, h, bx)?, weights: self.weights.clone() })
    }

    fn pair(&self, phi: &dyn TestFunction) -> f64 {
        pair_scalar(&self.points, &self.weights, phi)
    }

    fn push_combine(dim: usize, terms: &[(f64, &Self, &dyn FibreMap)], bx: &DomainBox) -> Result<Self> {
        let n: usize = terms.iter().map(|t| t.1.len()).sum();
        let mut points = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (c, mu, h) in terms {
            if *c == 0.0 {
                continue;
            }
            for (x, w) in mu.points.iter().zip(&mu.weights) {
                let y = pad(dim, h.apply(*x));
                bx.check(points.len(), y)?;
                points.push(y);
                weights.push(c * w);
            }
        }
        Ok(Self { dim, points, weights })
    }

    fn combine(dim: usize, terms: &[(f64, &Self)]) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (c, mu) in terms {
            if *c == 0.0 {
                continue;
            }
            points.extend_from_slice(&mu.points);
            weights.extend(mu.weights.iter().map(|w| c * w));
        }
        Self { dim, points, weights }
    }

    fn compact(&self, budget: usize, mode: CompactionMode, bx: &DomainBox) -> Result<(Self, f64)> {
        if budget == 0 {
            return Err(Error::InvalidArgument("compaction budget must be at least 1".into()));
        }
        if self.len() <= budget && !(mode == CompactionMode::Grid && self.dim == 2) {
            return Ok((self.clone(), 0.0));
        }
        let (points, weights, bound) = match mode {
            CompactionMode::Quantile => {
                if self.dim != 1 {
                    return Err(Error::InvalidArgument("quantile compaction needs a 1D fibre".into()));
                }
                compact::quantile_1d(&self.points, &self.weights, budget)
            }
            CompactionMode::Merge => {
                let (p, w, _, b) = compact::merge(self.dim, &self.points, &self.weights, None, budget, bx);
                (p, w, b)
            }
            CompactionMode::Grid => compact::grid_centroid(self.dim, &self.points, &self.weights, budget, bx),
        };
        let mut out = Self { dim: self.dim, points, weights };
        out.restore_mass();
        Ok((out, bound))
    }

    fn default_mode(dim: usize) -> CompactionMode {
        if dim == 1 {
            CompactionMode::Quantile
        } else {
            CompactionMode::Grid
        }
    }

    fn restore_mass(&mut self) -> f64 {
        let m = self.mass();
        let drift = m - 1.0;
        if drift.abs() > MASS_TOL {
            self.weights.iter_mut().for_each(|w| *w /= m);
        }
        drift
    }
}

/// Finitely supported signed measure. When `vanishes_on_constants` is set the
/// total mass is zero and the measure is read as an element of the dual of
/// `C^k` modulo constants.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedAtomicMeasure {
    dim: usize,
    points: Vec<Point>,
    weights: Vec<f64>,
    vanishes_on_constants: bool,
}

impl SignedAtomicMeasure {
    pub fn new(dim: usize, points: Vec<Point>, weights: Vec<f64>, vanishes_on_constants: bool) -> Result<Self> {
        check_points(dim, &points, weights.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        let out = Self { dim, points, weights, vanishes_on_constants };
        if vanishes_on_constants {
            let m = out.mass();
            if m.abs() > MASS_TOL * out.variation().max(1.0) {
                return Err(Error::InvalidArgument(format!("mass {m} of a measure vanishing on constants")));
            }
        }
        Ok(out)
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, points: Vec::new(), weights: Vec::new(), vanishes_on_constants: true }
    }

    /// `scale · (a − b)`.
    pub fn difference(a: &AtomicMeasure, b: &AtomicMeasure, scale: f64) -> Self {
        let mut points = a.points.clone();
        points.extend_from_slice(&b.points);
        let mut weights: Vec<f64> = a.weights.iter().map(|w| scale * w).collect();
        weights.extend(b.weights.iter().map(|w| -scale * w));
        let mut out = Self { dim: a.dim, points, weights, vanishes_on_constants: true };
        out.restore_mass();
        out
    }

    pub fn vanishes_on_constants(&self) -> bool {
        self.vanishes_on_constants
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= c);
        out
    }

    /// `self + c · other`.
    pub fn add_scaled(&self, c: f64, other: &Self) -> Self {
        let mut out = <Self as FibreMeasure>::combine(self.dim, &[(1.0, self), (c, other)]);
        out.vanishes_on_constants = self.vanishes_on_constants && other.vanishes_on_constants;
        out
    }

    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        let mut acc = Compensated::new();
        for (x, w) in self.points.iter().zip(&self.weights) {
            acc.add(w * f(*x));
        }
        acc.value()
    }

    pub fn to_first_order(&self) -> FirstOrderDistribution {
        FirstOrderDistribution {
            dim: self.dim,
            points: self.points.clone(),
            weights: self.weights.clone(),
            cotangents: vec![[0.0, 0.0]; self.points.len()],
        }
    }
}

impl FibreMeasure for SignedAtomicMeasure {
    const KIND: &'static str = "signed";

    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.weights.len()
    }
    fn points(&self) -> &[Point] {
        &self.points
    }
    fn weights(&self) -> &[f64] {
        &self.weights
    }
    fn annihilates_constants(&self) -> Option<bool> {
        Some(self.vanishes_on_constants)
    }

    fn push_forward(&self, h: &dyn FibreMap, bx: &DomainBox) -> Result<Self> {
        Ok(Self { points: push_points(&self.points, h, bx)?, ..self.clone() })
    }

    fn pair(&self, phi: &dyn TestFunction) -> f64 {
        pair_scalar(&self.points, &self.weights, phi)
    }

    fn push_combine(dim: usize, terms: &[(f64, &Self, &dyn FibreMap)], bx: &DomainBox) -> Result<Self> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut vanishes = true;
        for (c, mu, h) in terms {
            vanishes &= mu.vanishes_on_constants;
            if *c == 0.0 {
                continue;
            }
            for (x, w) in mu.points.iter().zip(&mu.weights) {
                let y = pad(dim, h.apply(*x));
                bx.check(points.len(), y)?;
                points.push(y);
                weights.push(c * w);
            }
        }
        Ok(Self { dim, points, weights, vanishes_on_constants: vanishes })
    }

    fn combine(dim: usize, terms: &[(f64, &Self)]) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut vanishes = true;
        for (c, mu) in terms {
            vanishes &= mu.vanishes_on_constants;
            if *c == 0.0 {
                continue;
            }
            points.extend_from_slice(&mu.points);
            weights.extend(mu.weights.iter().map(|w| c * w));
        }
        Self { dim, points, weights, vanishes_on_constants: vanishes }
    }

    fn compact(&self, budget: usize, mode: CompactionMode, bx: &DomainBox) -> Result<(Self, f64)> {
        if budget == 0 {
            return Err(Error::InvalidArgument("compaction budget must be at least 1".into()));
        }
        if self.len() <= budget && !(mode == CompactionMode::Grid && self.dim == 2) {
            return Ok((self.clone(), 0.0));
        }
        let (points, weights, bound) = match mode {
            CompactionMode::Quantile => return Err(Error::UnsupportedMode("quantile")),
            CompactionMode::Merge => {
                let (p, w, _, b) = compact::merge(self.dim, &self.points, &self.weights, None, budget, bx);
                (p, w, b)
            }
            CompactionMode::Grid => {
                let (p, w, _, b) = compact::grid_quadratic(self.dim, &self.points, &self.weights, None, budget, bx);
                (p, w, b)
            }
        };
        let mut out = Self { dim: self.dim, points, weights, vanishes_on_constants: self.vanishes_on_constants };
        out.restore_mass();
        Ok((out, bound))
    }

    fn default_mode(_dim: usize) -> CompactionMode {
        CompactionMode::Grid
    }

    /// For measures vanishing on constants, moves any residual mass onto the
    /// atom of largest absolute weight.
    fn restore_mass(&mut self) -> f64 {
        if !self.vanishes_on_constants || self.weights.is_empty() {
            return 0.0;
        }
        let m = self.mass();
        let k = dominant(&self.weights);
        self.weights[k] -= m;
        m
    }
}

fn dominant(w: &[f64]) -> usize {
    let mut k = 0;
    for (i, x) in w.iter().enumerate() {
        if x.abs() > w[k].abs() {
            k = i;
        }
    }
    k
}

/// Atoms carrying a scalar weight `w` and a cotangent weight `v`, acting on
/// test functions by `⟨ξ, φ⟩ = Σ w φ(x) + v · ∇φ(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstOrderDistribution {
    dim: usize,
    points: Vec<Point>,
    weights: Vec<f64>,
    cotangents: Vec<Point>,
}

impl FirstOrderDistribution {
    pub fn new(dim: usize, points: Vec<Point>, weights: Vec<f64>, cotangents: Vec<Point>) -> Result<Self> {
        check_points(dim, &points, weights.len())?;
        if cotangents.len() != weights.len() {
            return Err(Error::InvalidArgument("cotangent count differs from atom count".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) || cotangents.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        let cotangents = cotangents.into_iter().map(|v| pad(dim, v)).collect();
        Ok(Self { dim, points, weights, cotangents })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, points: Vec::new(), weights: Vec::new(), cotangents: Vec::new() }
    }

    pub fn cotangents(&self) -> &[Point] {
        &self.cotangents
    }

    /// True when the scalar weights sum to zero, i.e. the distribution
    /// annihilates constants.
    pub fn vanishes_on_constants(&self) -> bool {
        self.mass().abs() <= 1e-10 * self.variation().max(1.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= c);
        out.cotangents.iter_mut().for_each(|v| {
            v[0] *= c;
            v[1] *= c
        });
        out
    }

    /// `self + c · other`.
    pub fn add_scaled(&self, c: f64, other: &Self) -> Self {
        <Self as FibreMeasure>::combine(self.dim, &[(1.0, self), (c, other)])
    }

    /// Appends an atom.
    pub fn push_atom(&mut self, x: Point, w: f64, v: Point) {
        self.points.push(pad(self.dim, x));
        self.weights.push(w);
        self.cotangents.push(pad(self.dim, v));
    }
}

impl FibreMeasure for FirstOrderDistribution {
    const KIND: &'static str = "first-order";

    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.weights.len()
    }
    fn points(&self) -> &[Point] {
        &self.points
    }
    fn weights(&self) -> &[f64] {
        &self.weights
    }
    fn cotangent_weights(&self) -> Option<&[Point]> {
        Some(&self.cotangents)
    }
    fn annihilates_constants(&self) -> Option<bool> {
        Some(self.vanishes_on_constants())
    }

    fn variation(&self) -> f64 {
        csum(self.weights.iter().zip(&self.cotangents).map(|(w, v)| w.abs() + v[0].hypot(v[1])))
    }

    fn push_forward(&self, h: &dyn FibreMap, bx: &DomainBox) -> Result<Self> {
        let points = push_points(&self.points, h, bx)?;
        let cotangents = self
            .points
            .iter()
            .zip(&self.cotangents)
            .map(|(x, v)| pad(self.dim, mat_vec(&h.jacobian(*x), *v)))
            .collect();
        Ok(Self { dim: self.dim, points, weights: self.weights.clone(), cotangents })
    }

    fn pair(&self, phi: &dyn TestFunction) -> f64 {
        let mut acc = Compensated::new();
        for ((x, w), v) in self.points.iter().zip(&self.weights).zip(&self.cotangents) {
            acc.add(w * phi.value(*x));
            if v[0] != 0.0 || v[1] != 0.0 {
                let g = phi.gradient(*x);
                acc.add(v[0] * g[0] + v[1] * g[1]);
            }
        }
        acc.value()
    }

    fn push_combine(dim: usize, terms: &[(f64, &Self, &dyn FibreMap)], bx: &DomainBox) -> Result<Self> {
        let mut out = Self::zero(dim);
        for (c, mu, h) in terms {
            if *c == 0.0 {
                continue;
            }
            for ((x, w), v) in mu.points.iter().zip(&mu.weights).zip(&mu.cotangents) {
                let y = pad(dim, h.apply(*x));
                bx.check(out.points.len(), y)?;
                let dv = mat_vec(&h.jacobian(*x), *v);
                out.points.push(y);
                out.weights.push(c * w);
                out.cotangents.push(pad(dim, [c * dv[0], c * dv[1]]));
            }
        }
        Ok(out)
    }

    fn combine(dim: usize, terms: &[(f64, &Self)]) -> Self {
        let mut out = Self::zero(dim);
        for (c, mu) in terms {
            if *c == 0.0 {
                continue;
            }
            out.points.extend_from_slice(&mu.points);
            out.weights.extend(mu.weights.iter().map(|w| c * w));
            out.cotangents.extend(mu.cotangents.iter().map(|v| [c * v[0], c * v[1]]));
        }
        out
    }

    fn compact(&self, budget: usize, mode: CompactionMode, bx: &DomainBox) -> Result<(Self, f64)> {
        if budget == 0 {
            return Err(Error::InvalidArgument("compaction budget must be at least 1".into()));
        }
        if self.len() <= budget && !(mode == CompactionMode::Grid && self.dim == 2) {
            return Ok((self.clone(), 0.0));
        }
        let (points, weights, cotangents, bound) = match mode {
            CompactionMode::Quantile => return Err(Error::UnsupportedMode("quantile")),
            CompactionMode::Merge => {
                compact::merge(self.dim, &self.points, &self.weights, Some(&self.cotangents), budget, bx)
            }
            CompactionMode::Grid => {
                compact::grid_quadratic(self.dim, &self.points, &self.weights, Some(&self.cotangents), budget, bx)
            }
        };
        let cotangents = cotangents.expect("cotangents are carried through compaction");
        Ok((Self { dim: self.dim, points, weights, cotangents }, bound))
    }

    fn default_mode(_dim: usize) -> CompactionMode {
        CompactionMode::Grid
    }

    fn restore_mass(&mut self) -> f64 {
        0.0
    }
}
