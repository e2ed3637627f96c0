use std::sync::Arc;

use proptest::prelude::*;
use sectional::inducing::{induced_density, DensityOptions};
use sectional::measure::*;
use sectional::section::OmegaGrid;
use sectional::systems::*;
use sectional::transfer::{fixed_point, FixedPointOptions};
use sectional::Error;

fn bernoulli(alpha: f64, beta: f64) -> BernoulliSystem {
    BernoulliSystem::new(alpha, beta, BernoulliParameter::Alpha).unwrap()
}

/// Base intervals of all branches: each image `θ_i(Ω)` as `(lo, hi)`.
fn branch_ranges(sys: &dyn SkewSystem) -> Vec<(f64, f64)> {
    let (lo, hi) = sys.base_interval();
    let mut r: Vec<(f64, f64)> = (0..sys.branch_count())
        .map(|i| {
            let (a, b) = (sys.inverse(i, lo), sys.inverse(i, hi));
            (a.min(b), a.max(b))
        })
        .collect();
    r.sort_by(|a, b| a.0.total_cmp(&b.0));
    r
}

fn assert_tiles(sys: &dyn SkewSystem) {
    let (lo, hi) = sys.base_interval();
    let r = branch_ranges(sys);
    assert!((r[0].0 - lo).abs() < 1e-12, "{r:?}");
    assert!((r[r.len() - 1].1 - hi).abs() < 1e-12, "{r:?}");
    for w in r.windows(2) {
        assert!((w[0].1 - w[1].0).abs() < 1e-12, "{r:?}");
    }
}

fn probe(sys: &dyn SkewSystem, n: usize) -> Vec<f64> {
    let (lo, hi) = sys.base_interval();
    (0..=n).map(|j| lo + (hi - lo) * j as f64 / n as f64).collect()
}

fn assert_probe_invariants(sys: &dyn SkewSystem) {
    for w in probe(sys, 64) {
        let p = sys.weights(w);
        assert!(p.iter().all(|&p| p >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10, "weights at {w}: {p:?}");
        for i in 0..sys.branch_count() {
            let u = sys.inverse(i, w);
            assert!((sys.forward(i, u) - w).abs() < 1e-10, "branch {i} at {w}");
            assert!(sys.inverse_slope(i, w).abs() <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn bernoulli_branches_weights_and_maps() {
    let sys = bernoulli(0.4, 0.3);
    assert_eq!(sys.weights(0.7), vec![0.3, 0.7]);
    assert_tiles(&sys);
    // θ₂(1) = 1, θ₂(−1) = 2β − 1 = θ₁(1)
    assert!((sys.inverse(1, 1.0) - 1.0).abs() < 1e-15);
    assert!((sys.inverse(1, -1.0) + 0.4).abs() < 1e-15);
    assert!((sys.inverse(0, 1.0) + 0.4).abs() < 1e-15);
    assert_probe_invariants(&sys);

    let half = bernoulli(0.5, 0.5);
    for x in [-1.0, -0.3, 0.0, 0.8] {
        let g: Vec<f64> = (0..2).map(|i| half.fibre_map(i, 0.0).apply([x, 0.0])[0]).collect();
        let mut g = g;
        g.sort_by(f64::total_cmp);
        assert!((g[0] - (x / 2.0 - 0.5)).abs() < 1e-15 && (g[1] - (x / 2.0 + 0.5)).abs() < 1e-15);
    }
    assert!(sys.constant_sections());
    assert!(BernoulliSystem::new(0.0, 0.5, BernoulliParameter::Alpha).is_err());
    assert!(BernoulliSystem::new(0.5, 1.0, BernoulliParameter::Beta).is_err());
}

#[test]
fn bernoulli_fibre_alpha_derivative_matches_difference() {
    let h = 1e-6;
    let (a, b) = (bernoulli(0.4 + h, 0.3), bernoulli(0.4 - h, 0.3));
    let sys = bernoulli(0.4, 0.3);
    for i in 0..2 {
        for x in [-0.9, 0.0, 0.6] {
            let fd = (a.fibre_map(i, 0.0).apply([x, 0.0])[0] - b.fibre_map(i, 0.0).apply([x, 0.0])[0]) / (2.0 * h);
            let d = sys.fibre_dalpha(i, 0.0, [x, 0.0]).unwrap()[0];
            assert!((fd - d).abs() < 1e-8, "branch {i} x {x}: {fd} vs {d}");
        }
    }
    let beta = BernoulliSystem::new(0.4, 0.3, BernoulliParameter::Beta).unwrap();
    let (p, m) = (
        BernoulliSystem::new(0.4, 0.3 + h, BernoulliParameter::Beta).unwrap(),
        BernoulliSystem::new(0.4, 0.3 - h, BernoulliParameter::Beta).unwrap(),
    );
    for i in 0..2 {
        for w in [-0.8, 0.1, 0.9] {
            let fd = (p.inverse(i, w) - m.inverse(i, w)) / (2.0 * h);
            assert!((fd - beta.inverse_dalpha(i, w).unwrap()).abs() < 1e-8);
        }
    }
    assert_eq!(beta.weights_dalpha(0.0).unwrap(), vec![1.0, -1.0]);
}

#[test]
fn doubling_branches_and_trivial_fixed_point() {
    let fam = affine_doubling_test(0.4).unwrap();
    let sys = fam.at(0.4).unwrap();
    assert_eq!(sys.weights(0.3), vec![0.5, 0.5]);
    assert_tiles(&sys);
    assert_probe_invariants(&sys);

    // c ≡ 0: δ₀ is a global fibre fixed point
    let flat = DoublingFamily::new(0.4, 0.0, 16).unwrap().at(0.4).unwrap();
    let init = sectional::section::Section::constant(flat.grid().clone(), AtomicMeasure::dirac(1, [0.7, 0.0]));
    let fp = fixed_point(&flat, &FixedPointOptions::new(1e-10, 200, Compaction::new(64)), Some(init)).unwrap();
    for j in 0..flat.grid().len() {
        assert!(wasserstein1(fp.section.value(j), &AtomicMeasure::dirac(1, [0.0, 0.0])).unwrap() < 1e-9);
    }
}

#[test]
fn certificate_examples() {
    assert!((certificate_from_bounds(&[[0.4, 0.0, 0.0]]).unwrap() - 0.4).abs() < 1e-15);
    assert!((certificate_from_bounds(&[[0.5, 0.3, 0.1]]).unwrap() - 0.9).abs() < 1e-15);
    assert!(matches!(certificate_from_bounds(&[[0.9, 0.2, 0.0]]), Err(Error::NotContracting(l)) if l >= 1.1));
    assert!((contraction_certificate(&bernoulli(0.35, 0.5)).unwrap() - 0.35).abs() < 1e-15);
    let sys = affine_doubling_test(0.9).unwrap().at(0.9).unwrap();
    assert!((contraction_certificate(&sys).unwrap() - 0.9).abs() < 1e-15);
}

#[test]
fn lsv_base_map_examples() {
    for alpha in [0.1, 0.5, 0.9] {
        let f = Lsv::new(alpha);
        assert!((f.apply(0.5) - 1.0).abs() < 1e-15);
        assert!((f.left_inverse(1.0) - 0.5).abs() < 1e-15);
        assert_eq!(f.left_inverse(0.0), 0.0);
    }
    // bisection oracle for ω(1 + √2·√ω) = 0.5 on [0, ½]
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if mid * (1.0 + 2f64.sqrt() * mid.sqrt()) > 0.5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let f = Lsv::new(0.5);
    let u = f.left_inverse(0.5);
    assert!((u - 0.5 * (lo + hi)).abs() < 1e-12, "{u} vs {}", 0.5 * (lo + hi));
    assert!((f.apply(u) - 0.5).abs() < 1e-12);
}

#[test]
fn solenoid_system_invariants() {
    let fam = intermittent_solenoid(0.5, 0.3).unwrap();
    let sys = fam.at(0.5).unwrap();
    assert_tiles(sys.as_ref());
    assert_probe_invariants(sys.as_ref());
    // ∂_ω g against a difference of the fibre offsets
    for u in [0.1, 0.37, 0.8] {
        let h = 1e-6;
        let gp = sys.fibre_map(0, u + h).apply([0.2, -0.1]);
        let gm = sys.fibre_map(0, u - h).apply([0.2, -0.1]);
        let d = sys.fibre_domega(0, u, [0.2, -0.1]);
        for c in 0..2 {
            assert!(((gp[c] - gm[c]) / (2.0 * h) - d[c]).abs() < 1e-6);
        }
    }
    assert_eq!(sys.fibre_dalpha(1, 0.3, [0.1, 0.1]), Some([0.0, 0.0]));
    assert!(intermittent_solenoid(0.5, 0.5).is_err());
    assert!(intermittent_solenoid(1.0, 0.3).is_err());
}

#[test]
fn ulam_density_examples() {
    let grid = OmegaGrid::uniform(0.0, 1.0, 257).unwrap();
    let doubling = |w: f64| vec![(0.5 * w, 0.5), (0.5 * (w + 1.0), 0.5)];
    let r = ulam_density(&grid, &doubling, 100, 1e-12).unwrap();
    assert!(r.density.values().iter().all(|&v| (v - 1.0).abs() < 1e-10));

    let beta = 0.3;
    let grid = OmegaGrid::uniform(-1.0, 1.0, 257).unwrap();
    let f_beta = move |w: f64| vec![(beta * w + beta - 1.0, beta), ((1.0 - beta) * w + beta, 1.0 - beta)];
    let r = ulam_density(&grid, &f_beta, 100, 1e-12).unwrap();
    assert!(r.density.values().iter().all(|&v| (v - 0.5).abs() < 1e-10));

    let opts = DensityOptions { induced_m: 2048, ..DensityOptions::default() };
    let (rho, residual) = induced_density(0.5, &opts).unwrap();
    assert!(residual <= 1e-6, "{residual}");
    let (lo, hi) = rho.values().iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(lo > 0.1 && hi < 10.0, "induced density in [{lo}, {hi}]");

    let stuck = |w: f64| vec![(0.5 * w, 0.5), (0.5 * (w + 1.0), 0.5)];
    let coarse = OmegaGrid::uniform(0.0, 1.0, 5).unwrap();
    assert!(ulam_density(&coarse, &stuck, 0, 1e-12).is_err());
}

#[test]
fn density_derivative_vanishes_when_base_is_fixed() {
    let grid = OmegaGrid::uniform(-1.0, 1.0, 33).unwrap();
    for p in [BernoulliParameter::Alpha, BernoulliParameter::Beta] {
        let fam = bernoulli_convolution(0.4, 0.3, p).unwrap();
        let v = match p {
            BernoulliParameter::Alpha => 0.4,
            BernoulliParameter::Beta => 0.3,
        };
        assert!(density_derivative_fd(&fam, v, 1e-3, &grid).unwrap().iter().all(|&d| d == 0.0));
    }
    let fam = affine_doubling_test(0.4).unwrap();
    let grid = OmegaGrid::uniform(0.0, 1.0, 33).unwrap();
    assert!(density_derivative_fd(&fam, 0.4, 1e-3, &grid).unwrap().iter().all(|&d| d == 0.0));
    assert!(fam.density_derivative(0.4, 1e-3, &grid).unwrap().iter().all(|&d| d == 0.0));
    assert!(density_derivative_fd(&fam, 0.4, 0.0, &grid).is_err());
}

fn doubling_arc(lambda: f64) -> Arc<dyn SkewSystem> {
    affine_doubling_test(lambda).unwrap().system(lambda).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fibre_maps_respect_declared_lipschitz_bound(
        lambda in 0.05f64..0.95,
        alpha in 0.05f64..0.95,
        beta in 0.05f64..0.95,
        w in 0.0f64..1.0,
        x in -1.0f64..1.0,
        y in -1.0f64..1.0,
    ) {
        let systems: Vec<Arc<dyn SkewSystem>> = vec![doubling_arc(lambda), Arc::new(bernoulli(alpha, beta))];
        for sys in systems {
            let (lo, hi) = sys.base_interval();
            let omega = lo + (hi - lo) * w;
            for b in sys.branches(omega) {
                let l1 = sys.derivative_bounds(b.index)[0];
                let (gx, gy) = (b.map.apply([x, 0.0]), b.map.apply([y, 0.0]));
                prop_assert!(distance(gx, gy) <= l1 * (x - y).abs() + 1e-12);
                prop_assert!(b.map.lipschitz() <= l1 + 1e-12);
            }
        }
    }

    #[test]
    fn branch_weights_sum_to_one(alpha in 0.05f64..0.95, beta in 0.05f64..0.95, w in -1.0f64..1.0) {
        let sys = bernoulli(alpha, beta);
        prop_assert!((sys.weights(w).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let r: Vec<usize> = (0..2).filter(|&i| {
            let u = sys.inverse(i, w);
            (sys.base_map(u) - w).abs() < 1e-10
        }).collect();
        prop_assert_eq!(r.len(), 2);
    }
}
