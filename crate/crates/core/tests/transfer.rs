use proptest::prelude::*;
use sectional::measure::*;
use sectional::observable::Observable;
use sectional::section::*;
use sectional::systems::*;
use sectional::transfer::*;

fn bernoulli(alpha: f64, beta: f64) -> BernoulliSystem {
    BernoulliSystem::new(alpha, beta, BernoulliParameter::Alpha).unwrap()
}

fn dirac(x: f64) -> AtomicMeasure {
    AtomicMeasure::dirac(1, [x, 0.0])
}

fn cloud(points: &[f64], weights: &[f64]) -> AtomicMeasure {
    AtomicMeasure::new(1, points.iter().map(|&x| [x, 0.0]).collect(), weights.to_vec()).unwrap()
}

fn quantile_uniform(n: usize) -> AtomicMeasure {
    AtomicMeasure::uniform(1, (0..n).map(|j| [-1.0 + (2 * j + 1) as f64 / n as f64, 0.0]).collect()).unwrap()
}

fn flat_doubling(m: usize) -> DoublingSystem {
    DoublingFamily::new(0.4, 0.0, m).unwrap().at(0.4).unwrap()
}

#[test]
fn apply_k_examples() {
    let sys = bernoulli(0.5, 0.3);
    let s = Section::constant(sys.grid().clone(), dirac(0.0));
    let (out, diag) = apply_k(&sys, &s, &Compaction::new(256)).unwrap();
    assert!(out.is_constant());
    let expected = cloud(&[0.5, -0.5], &[0.3, 0.7]);
    assert!(wasserstein1(out.value(0), &expected).unwrap() < 1e-15);
    assert!(diag.mass_drift <= 1e-10);

    let flat = flat_doubling(16);
    let s = Section::constant(flat.grid().clone(), dirac(0.0));
    let (out, _) = apply_k(&flat, &s, &Compaction::new(64)).unwrap();
    assert!(sup_metric(&out, &s).unwrap() < 1e-15);

    let doubling = affine_doubling_test(0.4).unwrap().at(0.4).unwrap();
    let s = Section::new(
        doubling.grid().clone(),
        (0..doubling.grid().len()).map(|j| cloud(&[-0.3, 0.1 * (j % 5) as f64], &[0.25, 0.75])).collect(),
    )
    .unwrap();
    let (out, _) = apply_k(&doubling, &s, &Compaction::new(256)).unwrap();
    for j in 0..out.grid().len() {
        assert!((out.value(j).weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn apply_k_power_examples() {
    let sys = bernoulli(0.4, 0.3);
    let c = Compaction::new(256);
    let s = Section::constant(sys.grid().clone(), dirac(0.0));
    let (zero, _) = apply_k_power(&sys, &s, 0, &c).unwrap();
    assert_eq!(zero.value(0), s.value(0));
    let (one, _) = apply_k_power(&sys, &s, 1, &c).unwrap();
    assert_eq!(one.value(0), apply_k(&sys, &s, &c).unwrap().0.value(0));

    // branch tree of depth two: g_j ∘ g_i (0) = (1 − α)(s_j + α s_i), weight p_i p_j,
    // with s = +1 on the weight-β branch
    let (a, b) = (0.4, 0.3);
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    for (si, pi) in [(1.0, b), (-1.0, 1.0 - b)] {
        for (sj, pj) in [(1.0, b), (-1.0, 1.0 - b)] {
            pts.push((1.0 - a) * (sj + a * si));
            wts.push(pi * pj);
        }
    }
    let oracle = cloud(&pts, &wts);
    let (two, _) = apply_k_power(&sys, &s, 2, &c).unwrap();
    assert_eq!(two.value(0).len(), 4);
    assert!(wasserstein1(two.value(0), &oracle).unwrap() < 1e-15);
}

#[test]
fn fixed_point_examples() {
    let n = 256;
    let sys = bernoulli(0.5, 0.5);
    let tol = 1e-6;
    let fp = fixed_point(&sys, &FixedPointOptions::new(tol, 200, Compaction::new(n)), None).unwrap();
    assert!(fp.section.is_constant());
    let w = wasserstein1(fp.section.value(0), &quantile_uniform(n)).unwrap();
    assert!(w <= tol + 1.0 / n as f64, "{w}");

    let flat = flat_doubling(16);
    let fp = fixed_point(&flat, &FixedPointOptions::new(1e-12, 10, Compaction::new(64)), None).unwrap();
    assert_eq!(fp.report.iterations, 1);
    assert_eq!(fp.report.terminal_distance, 0.0);

    let sys = bernoulli(0.6, 0.5);
    let fp = fixed_point(&sys, &FixedPointOptions::new(1e-6, 200, Compaction::new(256)), None).unwrap();
    assert!(fp.section.value(0).pair(&FnTest::coordinate(0)).abs() < 1e-6);
    if let Some(r) = fp.report.ratio_estimate {
        assert!(r <= fp.lambda + 0.02);
    }

    let hot = affine_doubling_test(0.9).unwrap().at(0.9).unwrap();
    assert!(matches!(
        fixed_point(&hot, &FixedPointOptions::new(1e-9, 3, Compaction::new(64)), None),
        Err(sectional::Error::NoConvergence { iterations: 3, .. })
    ));
}

#[test]
fn fixed_point_forgets_its_initialization() {
    let sys = affine_doubling_test(0.4).unwrap().at(0.4).unwrap();
    let tol = 1e-6;
    let opts = FixedPointOptions::new(tol, 200, Compaction::new(256));
    let start = |x: f64| Section::constant(sys.grid().clone(), dirac(x));
    let a = fixed_point(&sys, &opts, Some(start(-0.8))).unwrap();
    let b = fixed_point(&sys, &opts, Some(start(0.8))).unwrap();
    let d = sup_metric(&a.section, &b.section).unwrap();
    // beyond 2·tol the compaction error of both runs enters
    let slack = a.diagnostics.compaction_bound + b.diagnostics.compaction_bound;
    assert!(d <= 2.0 * tol + slack, "{d} vs {}", 2.0 * tol + slack);
}

#[test]
fn duality_examples() {
    let sys = bernoulli(0.4, 0.3);
    let s = Section::constant(sys.grid().clone(), dirac(0.0));
    let q = quadrature_grid(&sys, 65).unwrap();
    let one = duality_residual(&sys, &s, Observable::One, &q).unwrap();
    assert_eq!(one.residual, 0.0);
    let x = duality_residual(&sys, &s, Observable::X, &q).unwrap();
    let expected = (1.0 - 0.4) * (2.0 * 0.3 - 1.0);
    assert!((x.lhs - expected).abs() < 1e-10 && (x.rhs - expected).abs() < 1e-10, "{x:?}");
    assert!(x.residual <= 1e-10);

    let flat = flat_doubling(16);
    let s = Section::constant(flat.grid().clone(), dirac(0.0));
    let r = duality_residual(&flat, &s, Observable::X, &quadrature_grid(&flat, 65).unwrap()).unwrap();
    assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
}

#[test]
fn duality_residual_shrinks_with_quadrature() {
    let sys = affine_doubling_test(0.4).unwrap().at(0.4).unwrap();
    let s = Section::new(
        sys.grid().clone(),
        sys.grid().nodes().iter().map(|&w| cloud(&[(2.0 * w).sin() * 0.5, -0.2], &[0.6, 0.4])).collect(),
    )
    .unwrap();
    let r: Vec<f64> = [33, 65, 129]
        .iter()
        .map(|&m| duality_residual(&sys, &s, Observable::OmegaX, &quadrature_grid(&sys, m).unwrap()).unwrap().residual)
        .collect();
    assert!(r[1] <= r[0] / 2.0 + 1e-12 && r[2] <= r[1] / 2.0 + 1e-12, "{r:?}");
}

fn random_section(m: usize) -> impl Strategy<Value = Section<AtomicMeasure>> {
    prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 3), prop::collection::vec(0.1f64..1.0, 3)), m).prop_map(
        move |nodes| {
            let values = nodes
                .into_iter()
                .map(|(x, w)| {
                    let s: f64 = w.iter().sum();
                    cloud(&x, &w.iter().map(|w| w / s).collect::<Vec<_>>())
                })
                .collect();
            Section::new(OmegaGrid::uniform(0.0, 1.0, m).unwrap(), values).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn operator_contracts_and_keeps_mass(a in random_section(8), b in random_section(8), lambda in 0.1f64..0.9) {
        let sys = DoublingFamily::new(lambda, 0.5, 8).unwrap().at(lambda).unwrap();
        let c = Compaction::new(8);
        let (ka, da) = apply_k(&sys, &a, &c).unwrap();
        let (kb, db) = apply_k(&sys, &b, &c).unwrap();
        for j in 0..8 {
            prop_assert!((ka.value(j).weights().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        let before = sup_metric(&a, &b).unwrap();
        let after = sup_metric(&ka, &kb).unwrap();
        let slack = da.compaction_bound + db.compaction_bound;
        prop_assert!(after <= lambda * before + slack + 1e-12, "{} > {}·{} + {}", after, lambda, before, slack);
    }
}
