//! `sectional run <config.json>` and `sectional verify <config.json> <expectations.json>`.
//!
//! Exit codes: 0 success, 1 failed expectations, 2 solver failure, 3 configuration error.

mod config;
mod experiments;
mod verify;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use config::RunConfig;
use experiments::Output;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(#[from] sectional::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Solver(sectional::Error::InvalidArgument(_) | sectional::Error::NotContracting(_)) => 3,
            CliError::Solver(_) | CliError::Io(_) => 2,
        }
    }
}

pub const MANIFEST: &str = "manifest.json";

/// Written last into the output directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub version: String,
    pub wall_time_s: f64,
    /// Every file of the output directory, the manifest included.
    pub files: Vec<String>,
    pub results: BTreeMap<String, f64>,
}

/// Empties an output directory left by an earlier run. Directories holding
/// anything else are refused.
fn prepare_output(dir: &Path) -> Result<(), CliError> {
    if !dir.exists() {
        fs::create_dir_all(dir)?;
        return Ok(());
    }
    if fs::read_dir(dir)?.next().is_none() {
        return Ok(());
    }
    let manifest = dir.join(MANIFEST);
    if !manifest.exists() {
        return Err(CliError::Config(format!("output directory {} is not empty", dir.display())));
    }
    let old: RunManifest = serde_json::from_str(&fs::read_to_string(&manifest)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", manifest.display())))?;
    for f in old.files {
        let p = dir.join(&f);
        if p.is_file() {
            fs::remove_file(&p)?;
        }
    }
    // section subdirectories left empty
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    subdirs.sort();
    for d in subdirs {
        if fs::read_dir(&d)?.next().is_none() {
            fs::remove_dir(&d)?;
        }
    }
    if fs::read_dir(dir)?.next().is_some() {
        return Err(CliError::Config(format!("output directory {} holds files not listed in its manifest", dir.display())));
    }
    Ok(())
}

pub fn run(cfg: &RunConfig) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    prepare_output(&cfg.output)?;
    let mut out = Output { dir: cfg.output.clone(), files: Vec::new() };
    let results = experiments::run(cfg, &mut out)?;
    let mut files = out.files;
    files.push(MANIFEST.to_owned());
    files.sort();
    let manifest = RunManifest {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        wall_time_s: start.elapsed().as_secs_f64(),
        files,
        results,
    };
    sectional::io::write_json(&cfg.output.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| CliError::Config(format!("THREADS = {v:?} is not a positive integer")))?;
    if n == 0 {
        return Err(CliError::Config("THREADS must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

const USAGE: &str = "usage: sectional run <config.json>\n       sectional verify <config.json> <expectations.json>";

fn main_inner(args: &[String]) -> Result<u8, CliError> {
    init_threads()?;
    match args {
        [cmd, cfg] if cmd == "run" => {
            let cfg = RunConfig::load(Path::new(cfg))?;
            let m = run(&cfg)?;
            for (k, v) in &m.results {
                println!("{k} = {v}");
            }
            println!("wrote {} files to {}", m.files.len(), cfg.output.display());
            Ok(0)
        }
        [cmd, cfg, exp] if cmd == "verify" => {
            let cfg = RunConfig::load(Path::new(cfg))?;
            let expectations = verify::Expectations::load(Path::new(exp))?;
            let m = run(&cfg)?;
            let report = verify::check(&expectations, &m.results)?;
            for line in &report.lines {
                println!("{line}");
            }
            println!("{} of {} expectations passed", report.passed, report.total);
            Ok(if report.passed == report.total { 0 } else { 1 })
        }
        _ => Err(CliError::Config(USAGE.into())),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match main_inner(&args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("sectional: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
