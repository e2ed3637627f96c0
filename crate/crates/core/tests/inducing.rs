use std::sync::{Arc, OnceLock};

use sectional::inducing::*;
use sectional::measure::*;
use sectional::section::{OmegaGrid, Section};
use sectional::systems::*;
use sectional::transfer::{fixed_point, FixedPointOptions};

const ALPHA: f64 = 0.5;
const LAMBDA: f64 = 0.3;

fn solenoid() -> Arc<SolenoidSystem> {
    static S: OnceLock<Arc<SolenoidSystem>> = OnceLock::new();
    S.get_or_init(|| intermittent_solenoid(ALPHA, LAMBDA).unwrap().at(ALPHA).unwrap()).clone()
}

fn induced() -> Arc<InducedSystem> {
    static S: OnceLock<Arc<InducedSystem>> = OnceLock::new();
    S.get_or_init(|| {
        let full = solenoid();
        let u = full.unfolded();
        Arc::new(InducedSystem::with_density(ALPHA, LAMBDA, None, 33, u.induced.clone(), u.induced_residual).unwrap())
    })
    .clone()
}

fn origin_section(sys: &InducedSystem) -> Section<AtomicMeasure> {
    Section::constant(sys.grid().clone(), AtomicMeasure::dirac(2, [0.0, 0.0]))
}

#[test]
fn return_time_examples() {
    assert_eq!(return_time(ALPHA, 0.8).unwrap(), 1);
    for alpha in [0.2, 0.5, 0.8] {
        assert_eq!(return_time(alpha, 0.75).unwrap(), 2);
    }
    assert_eq!(return_time(ALPHA, 1.0).unwrap(), 1);
    assert!(return_time(ALPHA, 0.4).is_err());
}

#[test]
fn induced_branch_examples() {
    for w in [0.5, 0.6, 0.93, 1.0] {
        let b = induced_branch(ALPHA, LAMBDA, 0, w, 1e-9).unwrap();
        assert!((b.source - 0.5 * (w + 1.0)).abs() < 1e-15);
    }
    assert!((induced_branch(ALPHA, LAMBDA, 0, 1.0, 1e-9).unwrap().source - 1.0).abs() < 1e-15);
    let b = induced_branch(ALPHA, LAMBDA, 1, 1.0, 1e-9).unwrap();
    assert!((b.source - 0.75).abs() < 1e-12);
    let lsv = Lsv::new(ALPHA);
    assert!((lsv.apply(lsv.apply(b.source)) - 1.0).abs() < 1e-9);
    for n in [2, 5, 20] {
        let b = induced_branch(ALPHA, LAMBDA, n, 0.7, 1e-9).unwrap();
        assert!((b.map.lipschitz() - LAMBDA.powi(n as i32 + 1)).abs() < 1e-15);
        assert!(b.source > 0.5 && b.source < 1.0 && b.slope.abs() <= 1.0);
    }
}

#[test]
fn induced_system_invariants() {
    let sys = induced();
    assert!(sys.max_dropped_mass() <= MAX_DROPPED_MASS);
    assert!(contraction_certificate(sys.as_ref()).unwrap() <= LAMBDA);
    // word 0 is the right branch, expanding by exactly 2
    for w in [0.5, 0.77, 1.0] {
        assert!((sys.inverse_slope(0, w) - 0.5).abs() < 1e-15);
    }
    for j in 0..=16 {
        let w = 0.5 + j as f64 / 32.0;
        let iw = sys.induced_weights(w);
        let retained: f64 = iw.raw.iter().sum();
        assert!(retained >= 1.0 - MAX_DROPPED_MASS, "{retained} at {w}");
        assert!((retained + iw.dropped - 1.0).abs() < 1e-4, "{retained} + {} at {w}", iw.dropped);
        for b in sys.branches(w) {
            assert!((0.5..=1.0).contains(&b.source) && b.slope.abs() <= 1.0);
            assert!((sys.forward(b.index, b.source) - w).abs() < 1e-9);
        }
    }
}

#[test]
fn dropped_mass_estimate_matches_deeper_words() {
    let base = induced();
    let n = base.n_max();
    let rho = solenoid().unfolded().induced.clone();
    let deep = InducedSystem::with_density(ALPHA, LAMBDA, Some(4 * n), 33, rho, 0.0).unwrap();
    for w in [0.55, 0.8, 1.0] {
        let est = base.induced_weights(w).dropped;
        let d = deep.induced_weights(w);
        let measured: f64 = d.raw[n + 1..].iter().sum::<f64>() + d.dropped;
        assert!(est <= 2.0 * measured && measured <= 2.0 * est, "{est} vs {measured} at {w}");
    }
    assert!(matches!(
        InducedSystem::with_density(ALPHA, LAMBDA, Some(1), 33, solenoid().unfolded().induced.clone(), 0.0),
        Err(sectional::Error::Truncation(_))
    ));
}

#[test]
fn identity_check_on_a_constant_section() {
    let full = solenoid();
    let sys = induced();
    let nu = origin_section(&sys);
    let c = Compaction::new(1024);
    let diam = sys.fibre_box().diameter();
    let mut prev = f64::INFINITY;
    for k in [3, 6, 8] {
        let id = induced_operator_identity_check(&full, &sys, &nu, k, &c).unwrap();
        assert!(id.residual <= id.dropped_mass * diam + 2.0 * id.compaction_bound + 1e-12, "{id:?}");
        assert!(id.residual <= prev);
        prev = id.residual;
        if k == 6 {
            assert!(id.residual <= 1e-2, "{}", id.residual);
        }
    }
}

#[test]
fn unfolding_of_the_induced_fixed_point() {
    let full = solenoid();
    let sys = induced();
    let c = Compaction::new(256);
    let fp = fixed_point(sys.as_ref(), &FixedPointOptions::new(1e-6, 200, c), None).unwrap();
    let opts = UnfoldOptions::new(c);
    let grid = OmegaGrid::graded(0.0, 1.0, 17, 1e-2, 1.5).unwrap();
    let (u, report) = unfold(&sys, &fp.section, &grid, full.density(), &opts).unwrap();
    for j in 0..grid.len() {
        assert!((u.value(j).weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(report.max_deficit <= 1e-3, "{report:?}");
    // on the right half the unfolding is the identity (only level 0 contributes)
    for (j, &w) in grid.nodes().iter().enumerate().filter(|(_, &w)| w >= 0.5) {
        let direct = fp.section.interpolate(w).unwrap();
        assert!(wasserstein1(u.value(j), &direct).unwrap() <= 2.0 * report.compaction_bound + 1e-12);
    }
    let bad = OmegaGrid::uniform(0.5, 1.0, 5).unwrap();
    assert!(unfold(&sys, &fp.section, &bad, full.density(), &opts).is_err());
}

#[test]
fn unfolded_density_examples() {
    let u = solenoid().unfolded().clone();
    assert!((u.density.total_mass() - 1.0).abs() < 1e-6);
    // ρ̄ = E·ρ on [½, 1]
    for w in [0.55, 0.7, 0.85, 1.0] {
        let lhs = u.induced.eval(w);
        let rhs = u.normalizer * u.density.eval(w);
        assert!((lhs - rhs).abs() < 1e-6 * lhs.max(1.0), "{lhs} vs {rhs} at {w}");
    }
    let (lo, hi) = u
        .induced
        .values()
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(lo > 0.1 && hi < 10.0);
    let slope = u.log_slope(1e-4, 1e-2).unwrap();
    assert!((slope + ALPHA).abs() <= 0.1, "{slope}");
}

#[test]
fn tail_statistics_examples() {
    for (alpha, expected) in [(0.5, -2.0), (0.75, -4.0 / 3.0)] {
        let t = tail_statistics(alpha, 1_000_000, 1).unwrap();
        assert!((t.slope - expected).abs() <= 0.15, "alpha {alpha}: {}", t.slope);
        assert!(t.rows.windows(2).all(|r| r[1].survival <= r[0].survival));
        assert!(t.rows.iter().all(|r| (r.count as f64 - r.survival * 1e6).abs() < 1e-6));
    }
    assert!(matches!(tail_statistics(0.5, 1000, 1), Err(sectional::Error::InsufficientData(_))));
}
