use std::sync::Arc;

use proptest::prelude::*;
use sectional::measure::*;
use sectional::observable::Observable;
use sectional::response::*;
use sectional::section::*;
use sectional::systems::*;
use sectional::transfer::*;

fn dirac(x: f64) -> AtomicMeasure {
    AtomicMeasure::dirac(1, [x, 0.0])
}

fn quantile_uniform(n: usize) -> AtomicMeasure {
    AtomicMeasure::uniform(1, (0..n).map(|j| [-1.0 + (2 * j + 1) as f64 / n as f64, 0.0]).collect()).unwrap()
}

fn family(alpha: f64, beta: f64, p: BernoulliParameter) -> BernoulliFamily {
    bernoulli_convolution(alpha, beta, p).unwrap()
}

fn options() -> ResponseOptions {
    ResponseOptions::new(1)
}

fn x() -> FnTest {
    FnTest::coordinate(0)
}

fn x2() -> FnTest {
    FnTest::coordinate_square(0, 1.0)
}

fn frozen_bernoulli() -> ConstantFamily {
    ConstantFamily::new(Arc::new(BernoulliSystem::new(0.4, 0.3, BernoulliParameter::Alpha).unwrap()))
}

#[test]
fn seed_examples() {
    let c = Compaction::new(256);
    let frozen = frozen_bernoulli();
    let sys = frozen.system(0.0).unwrap();
    let sigma = Section::constant(sys.grid().clone(), quantile_uniform(64));
    let seed = response_seed(&frozen, 0.0, 1e-3, SeedScheme::Forward, &sigma, &c).unwrap();
    let bank = standard_bank(&DomainBox::interval(-1.0, 1.0).unwrap(), 3, 24).unwrap();
    assert!(sup_dual_norm(&seed.tau, &bank, 3).unwrap() < 1e-12);

    // first moment of Kν is (1 − α)(2β − 1) + α·mean(ν), so the seed pairs with x to 2(1 − α)
    let fam = family(0.5, 0.3, BernoulliParameter::Beta);
    let sigma = Section::constant(OmegaGrid::uniform(-1.0, 1.0, 1).unwrap(), quantile_uniform(256));
    let seed = response_seed(&fam, 0.3, 1e-3, SeedScheme::Forward, &sigma, &c).unwrap();
    let v = seed.tau.value(0).pair(&x());
    assert!((v - 1.0).abs() < 0.02, "{v}");
    assert!(seed.tau.value(0).weights().iter().sum::<f64>().abs() < 1e-10);
    assert!(response_seed(&fam, 0.3, 0.0, SeedScheme::Forward, &sigma, &c).is_err());

    // Richardson: seeds at ε and ε/2 differ by O(ε)
    let fam = family(0.4, 0.5, BernoulliParameter::Alpha);
    let gap = |eps: f64| {
        let a = response_seed(&fam, 0.4, eps, SeedScheme::Forward, &sigma, &c).unwrap().tau;
        let b = response_seed(&fam, 0.4, eps / 2.0, SeedScheme::Forward, &sigma, &c).unwrap().tau;
        sup_dual_norm(&a.add_scaled(-1.0, &b).unwrap(), &bank, 3).unwrap()
    };
    let (g1, g2) = (gap(1e-2), gap(1e-3));
    assert!(g1 < 0.05 && g2 < g1 / 5.0, "{g1} {g2}");
}

#[test]
fn kdot_examples() {
    let sigma = Section::constant(OmegaGrid::uniform(-1.0, 1.0, 1).unwrap(), AtomicMeasure::new(1, vec![[-0.6, 0.0], [0.2, 0.0]], vec![0.25, 0.75]).unwrap());
    let mean = 0.25 * -0.6 + 0.75 * 0.2;
    let (a, b) = (0.4, 0.3);
    let sys = BernoulliSystem::new(a, b, BernoulliParameter::Alpha).unwrap();
    for w in [-0.7, 0.1, 0.9] {
        // β∫(x − 1)dν + (1 − β)∫(x + 1)dν
        let v = kdot_pair(&sys, &sigma, w, &x(), None).unwrap();
        assert!((v - (mean + 1.0 - 2.0 * b)).abs() < 1e-14, "{v}");
    }
    let sys = BernoulliSystem::new(a, b, BernoulliParameter::Beta).unwrap();
    let v = kdot_pair(&sys, &sigma, 0.2, &x(), None).unwrap();
    assert!((v - 2.0 * (1.0 - a)).abs() < 1e-14, "{v}");

    let frozen = frozen_bernoulli().system(0.0).unwrap();
    for phi in [x(), x2(), FnTest::constant(1.0)] {
        assert_eq!(kdot_pair(frozen.as_ref(), &sigma, 0.0, &phi, None).unwrap(), 0.0);
    }
}

#[test]
fn kdot_requires_tangent_for_moving_branches() {
    let fam = family(0.4, 0.3, BernoulliParameter::Beta);
    let sys = fam.at(0.3).unwrap();
    let grid = OmegaGrid::uniform(-1.0, 1.0, 3).unwrap();
    let sigma = Section::new(grid, vec![dirac(-0.5), dirac(0.0), dirac(0.5)]).unwrap();
    assert!(matches!(kdot_pair(&sys, &sigma, 0.3, &x(), None), Err(sectional::Error::Incomplete(_))));
}

#[test]
fn neumann_examples() {
    assert_eq!(neumann_order(0.5, 1.0, 1e-6), 21);
    assert_eq!(neumann_order(0.5, 0.0, 1e-6), 0);

    let sys = BernoulliSystem::new(0.5, 0.5, BernoulliParameter::Alpha).unwrap();
    let bank = default_bank(&sys).unwrap();
    let c = Compaction::new(256);
    let zero = SignedSection::zero(sys.grid().clone(), 1);
    let d = neumann_resolvent(&sys, &zero, 1e-6, &c, &bank).unwrap();
    assert_eq!(d.terms, 0);
    assert_eq!(sup_dual_norm(&d.nu_dot, &bank, 3).unwrap(), 0.0);
}

#[test]
fn neumann_partial_sums_obey_the_geometric_tail() {
    let fam = affine_doubling_test(0.4).unwrap();
    let sys = fam.at(0.4).unwrap();
    let mut opts = options();
    opts.fixed_point.tol = 1e-6;
    opts.signed = Compaction::new(256);
    let fp = fixed_point(&sys, &opts.fixed_point, None).unwrap();
    let seed = response_seed(&fam, 0.4, 1e-3, SeedScheme::Forward, &fp.section, &opts.signed).unwrap();
    let bank = default_bank(&sys).unwrap();
    let tau_norm = sup_dual_norm(&seed.tau, &bank, 3).unwrap();
    let sums = neumann_partial_sums(&sys, &seed.tau, 13, &opts.signed).unwrap();
    let lambda = sys.lambda_certificate().unwrap();
    for n in [0, 4, 8] {
        let gap = sup_dual_norm(&sums[n + 5].add_scaled(-1.0, &sums[n]).unwrap(), &bank, 3).unwrap();
        let bound = lambda.powi(n as i32) * tau_norm / (1.0 - lambda);
        assert!(gap <= bound, "n={n}: {gap} > {bound}");
    }
}

#[test]
fn bernoulli_sample_derivatives() {
    let fam = family(0.5, 0.3, BernoulliParameter::Beta);
    let run = sample_derivative(&fam, 0.3, &options()).unwrap();
    let v = run.derivative.nu_dot.value(0).pair(&x());
    assert!((v - 2.0).abs() < 1e-3, "{v}");
    assert!(run.derivative.nu_dot.value(0).weights().iter().sum::<f64>().abs() < 1e-10);
    assert!(run.derivative.tail_bound <= 1e-6);

    for alpha in [0.4, 0.6] {
        let fam = family(alpha, 0.5, BernoulliParameter::Alpha);
        let run = sample_derivative(&fam, alpha, &options()).unwrap();
        let v = run.derivative.nu_dot.value(0).pair(&x2());
        let exact = -2.0 / (1.0 + alpha).powi(2);
        assert!(((v - exact) / exact).abs() < 0.01, "alpha {alpha}: {v} vs {exact}");

        // (I − K)ν̇ = τ up to the tail bound
        let sys = fam.at(alpha).unwrap();
        let bank = default_bank(&sys).unwrap();
        let k = apply_k(&sys, &run.derivative.nu_dot, &options().signed).unwrap().0;
        let lhs = run.derivative.nu_dot.add_scaled(-1.0, &k).unwrap();
        let r = sup_dual_norm(&lhs.add_scaled(-1.0, &run.seed.tau).unwrap(), &bank, 3).unwrap();
        assert!(r <= 1e-5, "resolvent identity residual {r}");
    }

    let frozen = frozen_bernoulli();
    let run = sample_derivative(&frozen, 0.0, &options()).unwrap();
    assert_eq!(run.derivative.terms, 0);
}

#[test]
fn skew_response_examples() {
    let fam = family(0.4, 0.3, BernoulliParameter::Alpha);
    let r = skew_response(&fam, 0.4, Observable::X, &options()).unwrap();
    assert!(r.value.abs() < 1e-3, "{r:?}");
    assert_eq!(r.density_term, 0.0);
    let fam = family(0.4, 0.3, BernoulliParameter::Beta);
    let run = sample_derivative(&fam, 0.3, &options()).unwrap();
    let r = assemble_response(&fam, 0.3, Observable::X, &run, 1e-3).unwrap();
    assert!((r.value - 2.0).abs() < 1e-3, "{r:?}");
    let one = assemble_response(&fam, 0.3, Observable::One, &run, 1e-3).unwrap();
    assert!(one.value.abs() < 1e-12);

    let fd = finite_difference_response(&fam, 0.3, 1e-3, Observable::X, &options().fixed_point).unwrap();
    assert!((fd - 2.0).abs() < 1e-2, "{fd}");
    let frozen = frozen_bernoulli();
    assert_eq!(finite_difference_response(&frozen, 0.0, 1e-3, Observable::X, &options().fixed_point).unwrap(), 0.0);
}

#[test]
fn bernoulli_tangent_vanishes() {
    let sys = BernoulliSystem::new(0.4, 0.3, BernoulliParameter::Alpha).unwrap();
    let fp = fixed_point(&sys, &FixedPointOptions::new(1e-8, 200, Compaction::new(256)), None).unwrap();
    let t = tangent_fixed_point(&sys, &fp.section, 1e-10, 100, &Compaction::new(256)).unwrap();
    let bank = standard_bank(&sys.fibre_box(), 1, 24).unwrap();
    assert!(sup_dual_norm(&t.xi, &bank, 1).unwrap() <= 1e-10);
}

#[test]
fn doubling_tangent_matches_omega_difference() {
    let sys = affine_doubling_test(0.4).unwrap().at(0.4).unwrap();
    let c = Compaction::new(256);
    let fp = fixed_point(&sys, &FixedPointOptions::new(1e-8, 200, c), None).unwrap();
    let t = tangent_fixed_point(&sys, &fp.section, 1e-6, 200, &c).unwrap();
    let grid = sys.grid();
    let h = grid.nodes()[1] - grid.nodes()[0];
    let sq = FnTest::coordinate_square(0, 2.0);
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for j in (1..grid.len() - 1).step_by(4).take(16) {
        let fd = (fp.section.value(j + 1).pair(&sq) - fp.section.value(j - 1).pair(&sq)) / (2.0 * h);
        err = err.max((t.xi.value(j).pair(&sq) - fd).abs());
        scale = scale.max(fd.abs());
        // the fibre mean vanishes identically, and so does its ω-derivative
        assert!(t.xi.value(j).pair(&x()).abs() < 1e-6);
    }
    assert!(err <= 0.05 * scale, "{err} vs {scale}");
}

fn first_order_section(m: usize) -> impl Strategy<Value = FirstOrderSection> {
    prop::collection::vec((prop::collection::vec(-0.9f64..0.9, 3), prop::collection::vec(-1.0f64..1.0, 3)), m).prop_map(
        move |nodes| {
            let values = nodes
                .into_iter()
                .map(|(xs, vs)| {
                    FirstOrderDistribution::new(1, xs.iter().map(|&x| [x, 0.0]).collect(), vec![0.0; 3], vs.iter().map(|&v| [v, 0.0]).collect())
                        .unwrap()
                })
                .collect();
            Section::new(OmegaGrid::uniform(0.0, 1.0, m).unwrap(), values).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tangent_operator_contracts(a in first_order_section(8), b in first_order_section(8)) {
        let sys = DoublingFamily::new(0.4, 0.5, 8).unwrap().at(0.4).unwrap();
        let c = Compaction::new(1024);
        let bank = standard_bank(&sys.fibre_box(), 1, 24).unwrap();
        let sigma = fixed_point(&sys, &FixedPointOptions::new(1e-6, 200, Compaction::new(64)), None).unwrap().section;
        let r = remainder_section(&sys, &sigma, &c).unwrap();
        let ta = apply_tangent(&sys, &a, &r, &c).unwrap();
        let tb = apply_tangent(&sys, &b, &r, &c).unwrap();
        let before = sup_dual_norm(&a.add_scaled(-1.0, &b).unwrap(), &bank, 1).unwrap();
        let after = sup_dual_norm(&ta.add_scaled(-1.0, &tb).unwrap(), &bank, 1).unwrap();
        prop_assert!(after <= 0.4 * before * 1.05 + 1e-12, "{} > 0.4·{}", after, before);
    }
}
