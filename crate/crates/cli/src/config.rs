//! Run configuration: experiment, system and solver knobs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sectional::observable::Observable;
use sectional::systems::BernoulliParameter;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Fixpoint,
    Response,
    Duality,
    Induce,
    Tails,
    Tangent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Bernoulli,
    Solenoid,
    Doubling,
}

/// System specification. `alpha` and `beta` are the Bernoulli coefficients
/// (`alpha` is the LSV exponent for the solenoid); `lambda_fib` is the fibre
/// contraction of the solenoid and doubling systems; `grid_M` is the section
/// grid size; `atoms_N` the atom budget of fibre measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub system: SystemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_fib: Option<f64>,
    #[serde(rename = "grid_M", default, skip_serializing_if = "Option::is_none")]
    pub grid_m: Option<usize>,
    #[serde(rename = "atoms_N", default, skip_serializing_if = "Option::is_none")]
    pub atoms_n: Option<usize>,
}

/// One experiment. Knob ranges:
///
/// | knob | range | used by |
/// |---|---|---|
/// | `tol` | (0, 0.1] | fixed points, Neumann series, tangent |
/// | `budget` | [4, 4096] | atom budget, overrides `atoms_N` |
/// | `grid_M` | [16, 20000] | quadrature and density grid |
/// | `eps` | (0, 0.1] | finite differences |
/// | `k_max` | [1, 64] | induced identity depth |
/// | `n_max` | [1, 4000] | fixed-point iteration cap |
/// | `samples` | [10⁵, 10⁸] | return-time samples |
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub system: SystemSpec,
    /// Bernoulli coefficient differentiated in `response` and `tangent`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<BernoulliParameter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observables: Option<Vec<Observable>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(rename = "grid_M", default, skip_serializing_if = "Option::is_none")]
    pub grid_m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file unless absolute.
    pub output: PathBuf,
}

fn range<T: PartialOrd + Copy + std::fmt::Display>(name: &str, v: Option<T>, lo: T, hi: T, open_lo: bool) -> Result<(), CliError> {
    if let Some(x) = v {
        let ok_lo = if open_lo { x > lo } else { x >= lo };
        if !(ok_lo && x <= hi) {
            let l = if open_lo { "(" } else { "[" };
            return Err(CliError::Config(format!("{name} = {x} outside {l}{lo}, {hi}]")));
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if cfg.output.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output = dir.join(&cfg.output);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        range("tol", self.tol, 0.0, 0.1, true)?;
        range("budget", self.budget, 4, 4096, false)?;
        range("grid_M", self.grid_m, 16, 20000, false)?;
        range("eps", self.eps, 0.0, 0.1, true)?;
        range("k_max", self.k_max, 1, 64, false)?;
        range("n_max", self.n_max, 1, 4000, false)?;
        range("samples", self.samples, 100_000, 100_000_000, false)?;
        let s = &self.system;
        range("system.alpha", s.alpha, 0.0, 1.0, true)?;
        range("system.beta", s.beta, 0.0, 1.0, true)?;
        range("system.lambda_fib", s.lambda_fib, 0.0, 1.0, true)?;
        range("system.grid_M", s.grid_m, 1, 4096, false)?;
        range("system.atoms_N", s.atoms_n, 4, 4096, false)?;
        let need = |name: &str, present: bool| {
            if present {
                Ok(())
            } else {
                Err(CliError::Config(format!("system {:?} needs {name}", s.system)))
            }
        };
        match s.system {
            SystemKind::Bernoulli => {
                need("alpha", s.alpha.is_some())?;
                need("beta", s.beta.is_some())?;
                if s.lambda_fib.is_some() {
                    return Err(CliError::Config("lambda_fib does not apply to bernoulli".into()));
                }
            }
            SystemKind::Solenoid => {
                need("alpha", s.alpha.is_some())?;
                need("lambda_fib", s.lambda_fib.is_some())?;
                if s.lambda_fib.is_some_and(|l| l >= 0.5) {
                    return Err(CliError::Config("solenoid lambda_fib must lie in (0, 0.5)".into()));
                }
            }
            SystemKind::Doubling => {
                need("lambda_fib", s.lambda_fib.is_some())?;
                if s.alpha.is_some() || s.beta.is_some() {
                    return Err(CliError::Config("alpha and beta do not apply to doubling".into()));
                }
            }
        }
        if self.parameter.is_some() && s.system != SystemKind::Bernoulli {
            return Err(CliError::Config("parameter selects a Bernoulli coefficient".into()));
        }
        let solenoid_only = matches!(self.experiment, Experiment::Induce | Experiment::Tails);
        if solenoid_only && s.system != SystemKind::Solenoid {
            return Err(CliError::Config(format!("experiment {:?} needs the solenoid", self.experiment)));
        }
        Ok(())
    }
}
