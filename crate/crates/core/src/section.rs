//! Measure-valued sections over a discretized base interval.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{
    wasserstein1, AtomicMeasure, FibreMeasure, FirstOrderDistribution, SignedAtomicMeasure, TestBank,
};
use crate::numeric::median;
use crate::systems::BaseDensity;

/// Sorted nodes `ω_1 < … < ω_M` inside the base interval `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OmegaGrid {
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
}

impl OmegaGrid {
    /// `m` equally spaced nodes including both ends; `m = 1` gives the midpoint.
    pub fn uniform(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if !(lo < hi) || m == 0 {
            return Err(Error::InvalidArgument(format!("uniform grid on [{lo}, {hi}] with {m} nodes")));
        }
        let nodes = if m == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..m).map(|k| if k == m - 1 { hi } else { lo + (hi - lo) * k as f64 / (m - 1) as f64 }).collect()
        };
        Ok(Self { lo, hi, nodes })
    }

    /// Geometric grading from `start` (ratio `ratio`) until the local step
    /// reaches the uniform step `(hi − lo)/(m − 1)`, then uniform up to `hi`.
    /// Used where a density is singular at `lo`.
    pub fn graded(lo: f64, hi: f64, m: usize, start: f64, ratio: f64) -> Result<Self> {
        if !(lo < start && start < hi) || m < 2 || !(ratio > 1.0) {
            return Err(Error::InvalidArgument("invalid graded grid parameters".into()));
        }
        let h = (hi - lo) / (m - 1) as f64;
        let mut nodes = vec![start];
        let mut x = start;
        while (x - lo) * (ratio - 1.0) < h && x * ratio < hi {
            x = lo + (x - lo) * ratio;
            nodes.push(x);
        }
        let steps = ((hi - x) / h).ceil().max(1.0) as usize;
        let h2 = (hi - x) / steps as f64;
        for k in 1..=steps {
            nodes.push(if k == steps { hi } else { x + h2 * k as f64 });
        }
        Self::from_nodes(lo, hi, nodes)
    }

    pub fn from_nodes(lo: f64, hi: f64, nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("grid nodes must be strictly increasing".into()));
        }
        if nodes[0] < lo || *nodes.last().unwrap() > hi {
            return Err(Error::InvalidArgument("grid nodes outside the base interval".into()));
        }
        Ok(Self { lo, hi, nodes })
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bracketing node and linear position `t ∈ [0, 1]`; points beyond the
    /// outermost nodes are clamped to them.
    pub fn locate(&self, omega: f64) -> Result<(usize, f64)> {
        let slack = 1e-12 * (self.hi - self.lo);
        if !(omega >= self.lo - slack && omega <= self.hi + slack) {
            return Err(Error::OutsideBase(omega, self.lo, self.hi));
        }
        let n = self.nodes.len();
        if n == 1 || omega <= self.nodes[0] {
            return Ok((0, 0.0));
        }
        if omega >= self.nodes[n - 1] {
            return Ok((n - 1, 0.0));
        }
        let j = self.nodes.partition_point(|&x| x <= omega) - 1;
        let t = (omega - self.nodes[j]) / (self.nodes[j + 1] - self.nodes[j]);
        Ok((j, t))
    }
}

/// One fibre measure per grid node, or a single stored measure when the
/// section is constant.
#[derive(Clone, Debug)]
pub struct Section<M> {
    grid: OmegaGrid,
    values: Vec<M>,
    constant: bool,
}

pub type SignedSection = Section<SignedAtomicMeasure>;
pub type FirstOrderSection = Section<FirstOrderDistribution>;

impl<M: FibreMeasure> Section<M> {
    pub fn new(grid: OmegaGrid, values: Vec<M>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        Ok(Self { grid, values, constant: false })
    }

    /// The constant section `ω ↦ μ`.
    pub fn constant(grid: OmegaGrid, mu: M) -> Self {
        Self { grid, values: vec![mu], constant: true }
    }

    pub fn grid(&self) -> &OmegaGrid {
        &self.grid
    }
    pub fn is_constant(&self) -> bool {
        self.constant
    }
    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    /// Measure stored at node `j`.
    pub fn value(&self, j: usize) -> &M {
        if self.constant {
            &self.values[0]
        } else {
            &self.values[j]
        }
    }

    /// Distinct stored measures (one for a constant section).
    pub fn stored(&self) -> &[M] {
        &self.values
    }

    /// Stored node indices with their convex weights at `ω`.
    pub fn interpolation_weights(&self, omega: f64) -> Result<Vec<(usize, f64)>> {
        let (j, t) = self.grid.locate(omega)?;
        if self.constant {
            return Ok(vec![(0, 1.0)]);
        }
        Ok(if t == 0.0 {
            vec![(j, 1.0)]
        } else if t == 1.0 {
            vec![(j + 1, 1.0)]
        } else {
            vec![(j, 1.0 - t), (j + 1, t)]
        })
    }

    /// Convex mixture of the two bracketing node measures.
    pub fn interpolate(&self, omega: f64) -> Result<M> {
        let w = self.interpolation_weights(omega)?;
        if w.len() == 1 {
            return Ok(self.values[w[0].0].clone());
        }
        let terms: Vec<(f64, &M)> = w.iter().map(|&(k, c)| (c, &self.values[k])).collect();
        Ok(M::combine(self.dim(), &terms))
    }

    /// Dense copy with one stored measure per node.
    pub fn expanded(&self) -> Self {
        if !self.constant {
            return self.clone();
        }
        Self { grid: self.grid.clone(), values: vec![self.values[0].clone(); self.grid.len()], constant: false }
    }

    /// Applies `f` to every stored measure (in parallel, order preserved).
    pub fn map<N: FibreMeasure>(&self, f: impl Fn(&M) -> Result<N> + Sync + Send) -> Result<Section<N>> {
        let values = self.values.par_iter().map(f).collect::<Result<Vec<N>>>()?;
        Ok(Section { grid: self.grid.clone(), values, constant: self.constant })
    }

    /// Node-wise combination of two sections on the same grid.
    pub fn zip_map<N: FibreMeasure, O: FibreMeasure>(
        &self,
        other: &Section<N>,
        f: impl Fn(&M, &N) -> Result<O> + Sync + Send,
    ) -> Result<Section<O>> {
        check_grids(&self.grid, &other.grid)?;
        if self.constant && other.constant {
            return Ok(Section { grid: self.grid.clone(), values: vec![f(&self.values[0], &other.values[0])?], constant: true });
        }
        let values = (0..self.grid.len())
            .into_par_iter()
            .map(|j| f(self.value(j), other.value(j)))
            .collect::<Result<Vec<O>>>()?;
        Ok(Section { grid: self.grid.clone(), values, constant: false })
    }

    /// Largest atom count over stored measures.
    pub fn max_atoms(&self) -> usize {
        self.values.iter().map(|m| m.len()).max().unwrap_or(0)
    }
}

impl Section<SignedAtomicMeasure> {
    pub fn zero(grid: OmegaGrid, dim: usize) -> Self {
        Self::constant(grid, SignedAtomicMeasure::zero(dim))
    }

    /// `scale · (a − b)` node-wise.
    pub fn difference(a: &Section<AtomicMeasure>, b: &Section<AtomicMeasure>, scale: f64) -> Result<Self> {
        a.zip_map(b, |x, y| Ok(SignedAtomicMeasure::difference(x, y, scale)))
    }

    /// `self + c · other` node-wise.
    pub fn add_scaled(&self, c: f64, other: &Self) -> Result<Self> {
        self.zip_map(other, |x, y| Ok(x.add_scaled(c, y)))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|m| m.scaled(c)).collect(), constant: self.constant }
    }
}

impl Section<FirstOrderDistribution> {
    pub fn zero(grid: OmegaGrid, dim: usize) -> Self {
        Self::constant(grid, FirstOrderDistribution::zero(dim))
    }

    pub fn add_scaled(&self, c: f64, other: &Self) -> Result<Self> {
        self.zip_map(other, |x, y| Ok(x.add_scaled(c, y)))
    }
}

pub(crate) fn check_grids(a: &OmegaGrid, b: &OmegaGrid) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch(format!("grids with {} and {} nodes differ", a.len(), b.len())));
    }
    Ok(())
}

/// `sup_ω W1(σ_ω, σ'_ω)` over the grid nodes.
pub fn sup_metric(a: &Section<AtomicMeasure>, b: &Section<AtomicMeasure>) -> Result<f64> {
    Ok(node_metric(a, b)?.into_iter().fold(0.0, f64::max))
}

/// Node-wise `W1(σ_ω, σ'_ω)`.
pub fn node_metric(a: &Section<AtomicMeasure>, b: &Section<AtomicMeasure>) -> Result<Vec<f64>> {
    check_grids(&a.grid, &b.grid)?;
    if a.constant && b.constant {
        return Ok(vec![wasserstein1(&a.values[0], &b.values[0])?; a.grid.len()]);
    }
    (0..a.grid.len()).into_par_iter().map(|j| wasserstein1(a.value(j), b.value(j))).collect()
}

/// Node-wise dual-norm estimates against `bank`.
pub fn node_dual_norms<M: FibreMeasure>(s: &Section<M>, bank: &TestBank, k: usize) -> Result<Vec<f64>> {
    if s.constant {
        return Ok(vec![bank.dual_norm_estimate(&s.values[0], k)?; s.grid.len()]);
    }
    s.values.par_iter().map(|m| bank.dual_norm_estimate(m, k)).collect()
}

/// `sup_ω ‖σ_ω‖_{k*}` estimated with `bank` (a lower bound).
pub fn sup_dual_norm<M: FibreMeasure>(s: &Section<M>, bank: &TestBank, k: usize) -> Result<f64> {
    Ok(node_dual_norms(s, bank, k)?.into_iter().fold(0.0, f64::max))
}

/// `∫ ‖σ_ω‖_{k*} ρ(ω) dω` by trapezoid quadrature on the section grid.
pub fn l1_dual_norm<M: FibreMeasure>(s: &Section<M>, bank: &TestBank, k: usize, density: &BaseDensity) -> Result<f64> {
    let norms = node_dual_norms(s, bank, k)?;
    density.integrate_nodes(s.grid(), &norms)
}

/// Distances between successive iterates of a fixed-point iteration.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub distances: Vec<f64>,
    /// Median of `d_{n+1}/d_n` over the second half of the run; present only
    /// when at least four ratios are available there.
    pub ratio_estimate: Option<f64>,
    pub iterations: usize,
    pub terminal_distance: f64,
    pub converged: bool,
}

impl ConvergenceReport {
    pub fn from_distances(distances: Vec<f64>, converged: bool) -> Self {
        let n = distances.len();
        let start = n / 2;
        let ratios: Vec<f64> = (start.max(1)..n)
            .filter(|&i| distances[i - 1] > 0.0)
            .map(|i| distances[i] / distances[i - 1])
            .collect();
        let ratio_estimate = if ratios.len() >= 4 { Some(median(&ratios)) } else { None };
        Self { iterations: n, terminal_distance: distances.last().copied().unwrap_or(0.0), ratio_estimate, distances, converged }
    }

    /// Ratio `d_n / d_{n−1}` for each iteration (NaN where undefined).
    pub fn ratios(&self) -> Vec<f64> {
        (0..self.distances.len())
            .map(|i| if i == 0 || self.distances[i - 1] == 0.0 { f64::NAN } else { self.distances[i] / self.distances[i - 1] })
            .collect()
    }
}
