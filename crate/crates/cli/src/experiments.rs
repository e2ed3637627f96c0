//! The six experiments. Each writes its data files into the output
//! directory and returns the key scalars by name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use sectional::inducing::{
    induced_operator_identity_check, induced_response, tail_statistics, unfold, unfolded_fixed_point_residual,
    InducedFamily, InducedResponseOptions, UnfoldOptions,
};
use sectional::io::{write_convergence, write_density, write_json, write_section, write_tails, ResponseReport};
use sectional::measure::{wasserstein1, AtomicMeasure, Compaction, FibreMeasure};
use sectional::observable::Observable;
use sectional::response::{
    assemble_response, finite_difference_response, node_pairings, sample_derivative, skew_integral,
    tangent_fixed_point, ResponseOptions,
};
use sectional::systems::{
    bernoulli_convolution, contraction_certificate, BernoulliParameter, DoublingFamily, SkewSystem, SolenoidFamily,
    SolenoidOptions, SystemFamily,
};
use sectional::transfer::{duality_residual, fixed_point, quadrature_grid, FixedPoint, FixedPointOptions};

use crate::config::{Experiment, RunConfig, SystemKind};
use crate::CliError;

pub type Results = BTreeMap<String, f64>;

const DEFAULT_BUDGET: usize = 256;
const DEFAULT_MAX_ITER: usize = 200;
/// Section grid of the induced system on `[½, 1]`.
const INDUCED_SECTION_M: usize = 33;
/// Truncation levels of the unfolded fixed-point residual table.
const UNFOLD_LEVELS: [usize; 6] = [1, 2, 4, 8, 16, 64];

enum Family {
    Bernoulli(sectional::systems::BernoulliFamily),
    Doubling(DoublingFamily),
    Solenoid(SolenoidFamily),
}

impl Family {
    fn as_dyn(&self) -> &dyn SystemFamily {
        match self {
            Family::Bernoulli(f) => f,
            Family::Doubling(f) => f,
            Family::Solenoid(f) => f,
        }
    }
}

/// Output collector: file names relative to the output directory.
pub struct Output {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

impl Output {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_owned());
        self.dir.join(name)
    }

    fn section<M: FibreMeasure>(&mut self, name: &str, s: &sectional::section::Section<M>, k: Option<usize>) -> Result<(), CliError> {
        for p in write_section(&self.dir.join(name), s, k)? {
            let rel = p.strip_prefix(&self.dir).expect("inside output").to_string_lossy().replace('\\', "/");
            self.files.push(rel);
        }
        Ok(())
    }
}

struct Setup {
    family: Family,
    alpha0: f64,
    budget: usize,
    tol: f64,
    max_iter: usize,
}

impl Setup {
    fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let s = &cfg.system;
        let budget = cfg.budget.or(s.atoms_n).unwrap_or(DEFAULT_BUDGET);
        let (family, alpha0) = match s.system {
            SystemKind::Bernoulli => {
                let (a, b) = (s.alpha.expect("validated"), s.beta.expect("validated"));
                let p = cfg.parameter.unwrap_or(BernoulliParameter::Alpha);
                let v = if p == BernoulliParameter::Alpha { a } else { b };
                (Family::Bernoulli(bernoulli_convolution(a, b, p)?), v)
            }
            SystemKind::Doubling => {
                let l = s.lambda_fib.expect("validated");
                (Family::Doubling(DoublingFamily::new(l, 0.5, s.grid_m.unwrap_or(64))?), l)
            }
            SystemKind::Solenoid => {
                let mut opts = SolenoidOptions::new(s.lambda_fib.expect("validated"));
                if let Some(m) = s.grid_m {
                    opts.section_m = m;
                }
                if let Some(m) = cfg.grid_m {
                    opts.density.grid_m = m;
                }
                (Family::Solenoid(SolenoidFamily::new(opts)), s.alpha.expect("validated"))
            }
        };
        Ok(Self { family, alpha0, budget, tol: cfg.tol.unwrap_or(1e-6), max_iter: cfg.n_max.unwrap_or(DEFAULT_MAX_ITER) })
    }

    fn system(&self) -> Result<Arc<dyn SkewSystem>, CliError> {
        Ok(self.family.as_dyn().system(self.alpha0)?)
    }

    fn fixed_point_options(&self, tol: f64) -> FixedPointOptions {
        FixedPointOptions::new(tol, self.max_iter, Compaction::new(self.budget))
    }

    fn fixed_point(&self, sys: &dyn SkewSystem, tol: f64) -> Result<FixedPoint, CliError> {
        Ok(fixed_point(sys, &self.fixed_point_options(tol), None)?)
    }
}

pub fn run(cfg: &RunConfig, out: &mut Output) -> Result<Results, CliError> {
    let setup = Setup::new(cfg)?;
    match cfg.experiment {
        Experiment::Fixpoint => fixpoint(cfg, &setup, out),
        Experiment::Response => response(cfg, &setup, out),
        Experiment::Duality => duality(cfg, &setup, out),
        Experiment::Induce => induce(cfg, &setup, out),
        Experiment::Tails => tails(cfg, &setup, out),
        Experiment::Tangent => tangent(&setup, out),
    }
}

fn default_observables(kind: SystemKind) -> Vec<Observable> {
    match kind {
        SystemKind::Bernoulli => vec![Observable::X, Observable::XSquared],
        SystemKind::Doubling => vec![Observable::X, Observable::XSquared, Observable::CosPiOmegaX],
        SystemKind::Solenoid => vec![Observable::OmegaPlusX],
    }
}

fn fixpoint(cfg: &RunConfig, setup: &Setup, out: &mut Output) -> Result<Results, CliError> {
    let sys = setup.system()?;
    let fp = setup.fixed_point(sys.as_ref(), setup.tol)?;
    write_convergence(&out.path("convergence.csv"), &fp.report)?;
    out.section("fixed_point", &fp.section, None)?;
    let mut r = Results::new();
    r.insert("iterations".into(), fp.report.iterations as f64);
    r.insert("terminal_distance".into(), fp.report.terminal_distance);
    r.insert("lambda_cert".into(), contraction_certificate(sys.as_ref())?);
    if let Some(l) = fp.report.ratio_estimate {
        r.insert("lambda_hat".into(), l);
    }
    r.insert("compaction_bound".into(), fp.diagnostics.compaction_bound);
    for obs in [Observable::X, Observable::XSquared] {
        r.insert(format!("integral.{}", obs.name()), skew_integral(sys.as_ref(), &fp.section, obs)?);
    }
    if cfg.system.system == SystemKind::Bernoulli {
        // quantile discretization of Uniform[-1, 1], the exact fixed point at alpha = beta = 1/2
        let n = setup.budget;
        let pts = (0..n).map(|j| [-1.0 + (2 * j + 1) as f64 / n as f64, 0.0]).collect();
        let uniform = AtomicMeasure::uniform(1, pts)?;
        r.insert("w1_uniform".into(), wasserstein1(fp.section.value(0), &uniform)?);
    }
    Ok(r)
}

fn analytic(cfg: &RunConfig, obs: Observable) -> Option<f64> {
    let s = &cfg.system;
    if s.system != SystemKind::Bernoulli {
        return None;
    }
    let (a, b) = (s.alpha?, s.beta?);
    let p = cfg.parameter.unwrap_or(BernoulliParameter::Alpha);
    // mean 2β − 1, second moment 4β(1 − β)(1 − α)/(1 + α) + (2β − 1)²
    match (obs, p) {
        (Observable::One, _) => Some(0.0),
        (Observable::X, BernoulliParameter::Alpha) => Some(0.0),
        (Observable::X, BernoulliParameter::Beta) => Some(2.0),
        (Observable::XSquared, BernoulliParameter::Alpha) => Some(-8.0 * b * (1.0 - b) / ((1.0 + a) * (1.0 + a))),
        (Observable::XSquared, BernoulliParameter::Beta) => {
            Some((4.0 - 8.0 * b) * (1.0 - a) / (1.0 + a) + 4.0 * (2.0 * b - 1.0))
        }
        _ => None,
    }
}

fn response(cfg: &RunConfig, setup: &Setup, out: &mut Output) -> Result<Results, CliError> {
    let observables = cfg.observables.clone().unwrap_or_else(|| default_observables(cfg.system.system));
    let mut r = Results::new();
    let mut push = |report: ResponseReport, out: &mut Output| -> Result<(), CliError> {
        let name = report.observable.name();
        write_json(&out.path(&format!("response_{name}.json")), &report)?;
        r.insert(format!("response.{name}.resolvent"), report.value_resolvent);
        r.insert(format!("response.{name}.fd"), report.value_fd);
        if let Some(v) = report.value_analytic {
            r.insert(format!("response.{name}.analytic"), v);
        }
        r.insert(format!("response.{name}.tail_bound"), report.tail_bound);
        Ok(())
    };
    match &setup.family {
        Family::Solenoid(fam) => {
            let mut opts = InducedResponseOptions::new(setup.budget);
            if let Some(e) = cfg.eps {
                opts.eps = e;
                opts.density_eps = e;
            }
            opts.tol = setup.tol;
            let fd_opts = setup.fixed_point_options(1e-8);
            for obs in observables {
                let ir = induced_response(fam, setup.alpha0, obs, &opts)?;
                let fd = finite_difference_response(fam, setup.alpha0, opts.eps, obs, &fd_opts)?;
                push(
                    ResponseReport {
                        observable: obs,
                        alpha0: setup.alpha0,
                        epsilon: opts.eps,
                        value_resolvent: ir.value,
                        value_fd: fd,
                        value_analytic: None,
                        tail_bound: ir.tail_bound,
                        n_neumann: ir.neumann_terms,
                    },
                    out,
                )?;
            }
        }
        _ => {
            let family = setup.family.as_dyn();
            let sys = setup.system()?;
            let mut opts = ResponseOptions::new(sys.fibre_box().dim());
            opts.fixed_point = FixedPointOptions::new(1e-8, setup.max_iter, Compaction::new(setup.budget));
            opts.signed = Compaction::new(setup.budget);
            opts.tol = setup.tol;
            if let Some(e) = cfg.eps {
                opts.eps = e;
                opts.density_eps = e;
            }
            let run = sample_derivative(family, setup.alpha0, &opts)?;
            for obs in observables {
                let sr = assemble_response(family, setup.alpha0, obs, &run, opts.density_eps)?;
                let fd = finite_difference_response(family, setup.alpha0, opts.eps, obs, &opts.fixed_point)?;
                push(
                    ResponseReport {
                        observable: obs,
                        alpha0: setup.alpha0,
                        epsilon: opts.eps,
                        value_resolvent: sr.value,
                        value_fd: fd,
                        value_analytic: analytic(cfg, obs),
                        tail_bound: sr.tail_bound,
                        n_neumann: sr.neumann_terms,
                    },
                    out,
                )?;
            }
        }
    }
    Ok(r)
}

#[derive(Serialize)]
struct DualityRow {
    observable: Observable,
    lhs: f64,
    rhs: f64,
    residual: f64,
    quadrature_nodes: usize,
}

fn duality(cfg: &RunConfig, setup: &Setup, out: &mut Output) -> Result<Results, CliError> {
    let observables = cfg.observables.clone().unwrap_or_else(|| vec![Observable::One, Observable::X, Observable::OmegaX]);
    let sys = setup.system()?;
    let fp = setup.fixed_point(sys.as_ref(), setup.tol)?;
    let quad = quadrature_grid(sys.as_ref(), cfg.grid_m.unwrap_or(2048))?;
    let mut rows = Vec::new();
    let mut r = Results::new();
    for obs in observables {
        let d = duality_residual(sys.as_ref(), &fp.section, obs, &quad)?;
        r.insert(format!("duality.{}", obs.name()), d.residual);
        rows.push(DualityRow { observable: obs, lhs: d.lhs, rhs: d.rhs, residual: d.residual, quadrature_nodes: d.quadrature_nodes });
    }
    write_json(&out.path("duality.json"), &rows)?;
    Ok(r)
}

fn induce(cfg: &RunConfig, setup: &Setup, out: &mut Output) -> Result<Results, CliError> {
    let Family::Solenoid(fam) = &setup.family else { unreachable!("validated") };
    let full = fam.at(setup.alpha0)?;
    let ifam = InducedFamily::new(setup.alpha0, fam.options.lambda_fib, INDUCED_SECTION_M, fam.options.density.clone())?;
    let induced = ifam.at(setup.alpha0)?;
    let c = Compaction::new(setup.budget);
    let fp = fixed_point(induced.as_ref(), &setup.fixed_point_options(setup.tol), None)?;
    write_convergence(&out.path("induced_convergence.csv"), &fp.report)?;
    out.section("induced_fixed_point", &fp.section, None)?;

    let k_cap = cfg.k_max.unwrap_or(6);
    let id = induced_operator_identity_check(&full, &induced, &fp.section, k_cap, &c)?;

    let unfold_opts = UnfoldOptions::new(c);
    let (unfolded, report) = unfold(&induced, &fp.section, full.grid(), full.density(), &unfold_opts)?;
    out.section("unfolded", &unfolded, None)?;

    let path = out.path("unfolded_residual.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["k_max", "residual", "tail", "slack", "bound"]).map_err(sectional::Error::from)?;
    let mut residuals = Vec::new();
    for k in UNFOLD_LEVELS {
        let u = unfolded_fixed_point_residual(&full, &induced, &fp.section, &UnfoldOptions::truncated(k, c))?;
        w.write_record([k.to_string(), u.residual.to_string(), u.tail.to_string(), u.slack.to_string(), u.bound.to_string()])
            .map_err(sectional::Error::from)?;
        residuals.push(u.residual);
    }
    let u = unfolded_fixed_point_residual(&full, &induced, &fp.section, &unfold_opts)?;
    w.write_record([report.levels.to_string(), u.residual.to_string(), u.tail.to_string(), u.slack.to_string(), u.bound.to_string()])
        .map_err(sectional::Error::from)?;
    w.flush()?;

    write_density(&out.path("density.csv"), full.density())?;
    write_density(&out.path("induced_density.csv"), &full.unfolded().induced)?;

    let mut r = Results::new();
    r.insert("identity_residual".into(), id.residual);
    r.insert("identity_dropped_mass".into(), id.dropped_mass);
    r.insert("unfolded_residual".into(), u.residual);
    r.insert("unfolded_bound".into(), u.bound);
    r.insert("unfolded_tail".into(), u.tail);
    r.insert("unfolded_slack".into(), u.slack);
    let decreasing = residuals.windows(2).all(|p| p[1] <= p[0]);
    r.insert("unfolded_decreasing".into(), if decreasing { 1.0 } else { 0.0 });
    r.insert("unfold_levels".into(), report.levels as f64);
    r.insert("unfold_max_deficit".into(), report.max_deficit);
    r.insert("density_slope".into(), full.unfolded().log_slope(1e-6, 1e-4)?);
    r.insert("induced_density_residual".into(), full.unfolded().induced_residual);
    r.insert("induced_iterations".into(), fp.report.iterations as f64);
    r.insert("n_max".into(), induced.n_max() as f64);
    Ok(r)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(sectional::Error::from)?)
}

fn tails(cfg: &RunConfig, setup: &Setup, out: &mut Output) -> Result<Results, CliError> {
    let t = tail_statistics(setup.alpha0, cfg.samples.unwrap_or(1_000_000), cfg.seed)?;
    write_tails(&out.path("tails.csv"), &t.rows)?;
    let mut r = Results::new();
    r.insert("tail_slope".into(), t.slope);
    r.insert("tail_intercept".into(), t.intercept);
    r.insert("k_star".into(), t.k_star as f64);
    Ok(r)
}

fn tangent(setup: &Setup, out: &mut Output) -> Result<Results, CliError> {
    let sys = setup.system()?;
    let fp = setup.fixed_point(sys.as_ref(), 1e-8)?;
    let t = tangent_fixed_point(sys.as_ref(), &fp.section, setup.tol, setup.max_iter, &Compaction::new(setup.budget))?;
    out.section("tangent", &t.xi, Some(1))?;
    write_convergence(&out.path("tangent_convergence.csv"), &t.report)?;

    let nodes = fp.section.grid().nodes();
    let observables = [Observable::X, Observable::XSquared];
    let xi: Vec<Vec<f64>> = observables.iter().map(|o| node_pairings(&t.xi, *o)).collect();
    let nu: Vec<Vec<f64>> = observables.iter().map(|o| node_pairings(&fp.section, *o)).collect();
    let path = out.path("tangent.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["omega", "xi_x", "fd_x", "xi_x_squared", "fd_x_squared"]).map_err(sectional::Error::from)?;
    let mut err = [0.0f64; 2];
    let mut scale = [0.0f64; 2];
    for j in 0..nodes.len() {
        let mut row = vec![nodes[j].to_string()];
        for k in 0..2 {
            row.push(xi[k][j].to_string());
            if j > 0 && j + 1 < nodes.len() {
                let d = (nu[k][j + 1] - nu[k][j - 1]) / (nodes[j + 1] - nodes[j - 1]);
                err[k] = err[k].max((xi[k][j] - d).abs());
                scale[k] = scale[k].max(d.abs());
                row.push(d.to_string());
            } else {
                row.push(String::new());
            }
        }
        w.write_record(&row).map_err(sectional::Error::from)?;
    }
    w.flush()?;
    let mut r = Results::new();
    r.insert("tangent_residual".into(), t.residual);
    r.insert("tangent_iterations".into(), t.report.iterations as f64);
    for (k, o) in observables.iter().enumerate() {
        r.insert(format!("tangent.{}.sup", o.name()), xi[k].iter().fold(0.0f64, |m, v| m.max(v.abs())));
        r.insert(format!("tangent.{}.fd_error", o.name()), err[k]);
        r.insert(format!("tangent.{}.fd_scale", o.name()), scale[k]);
    }
    Ok(r)
}
