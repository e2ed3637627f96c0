//! Plain-text serialization: atom clouds, sections, convergence histories,
//! tail and density tables (CSV) and response reports (JSON).
//!
//! Numbers are written with the shortest representation that round-trips,
//! so files are reproducible byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inducing::TailRow;
use crate::measure::{AtomicMeasure, FibreMeasure, Point};
use crate::observable::Observable;
use crate::section::{ConvergenceReport, OmegaGrid, Section};
use crate::systems::BaseDensity;

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

/// Atom cloud with header `x[,y],w[,vx[,vy]]`, rows in storage order.
pub fn write_atoms<M: FibreMeasure>(path: &Path, mu: &M) -> Result<()> {
    let dim = mu.dim();
    let cot = mu.cotangent_weights();
    let mut header: Vec<&str> = if dim == 1 { vec!["x", "w"] } else { vec!["x", "y", "w"] };
    if cot.is_some() {
        header.extend(if dim == 1 { &["vx"][..] } else { &["vx", "vy"][..] });
    }
    let mut w = writer(path)?;
    w.write_record(&header)?;
    for (i, (x, wt)) in mu.points().iter().zip(mu.weights()).enumerate() {
        let mut row: Vec<String> = x[..dim].iter().map(|c| num(*c)).collect();
        row.push(num(*wt));
        if let Some(v) = cot {
            row.extend(v[i][..dim].iter().map(|c| num(*c)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a probability atom cloud written by [`write_atoms`].
pub fn read_atoms(path: &Path) -> Result<AtomicMeasure> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let dim = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["x", "w"] => 1,
        ["x", "y", "w"] => 2,
        h => return Err(Error::InvalidArgument(format!("unexpected atom header {h:?}"))),
    };
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("{s:?}: {e}"))))
            .collect::<Result<_>>()?;
        let p: Point = if dim == 1 { [vals[0], 0.0] } else { [vals[0], vals[1]] };
        points.push(p);
        weights.push(vals[dim]);
    }
    AtomicMeasure::new(dim, points, weights)
}

/// Grid description stored in `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub m: usize,
}

/// `meta.json` of a section directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionMeta {
    pub kind: String,
    pub dim: usize,
    /// One stored measure (`node_0.csv`) replicated over the grid.
    pub constant: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vanishes_on_constants: Option<bool>,
    /// Smoothness order of the dual norm the section is measured in.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub grid: GridSpec,
}

/// Writes `grid.csv`, `node_<j>.csv` and `meta.json` into `dir` and returns
/// the written paths.
pub fn write_section<M: FibreMeasure>(dir: &Path, section: &Section<M>, k: Option<usize>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let grid = section.grid();
    let gpath = dir.join("grid.csv");
    let mut w = writer(&gpath)?;
    w.write_record(["omega"])?;
    for &x in grid.nodes() {
        w.write_record([num(x)])?;
    }
    w.flush()?;
    files.push(gpath);
    for (j, mu) in section.stored().iter().enumerate() {
        let p = dir.join(format!("node_{j}.csv"));
        write_atoms(&p, mu)?;
        files.push(p);
    }
    let (lo, hi) = grid.bounds();
    let meta = SectionMeta {
        kind: M::KIND.to_owned(),
        dim: section.dim(),
        constant: section.is_constant(),
        vanishes_on_constants: section.stored().first().and_then(|m| m.annihilates_constants()),
        k,
        grid: GridSpec { lo, hi, m: grid.len() },
    };
    let mpath = dir.join("meta.json");
    write_json(&mpath, &meta)?;
    files.push(mpath);
    Ok(files)
}

/// Reads a probability section written by [`write_section`].
pub fn read_section(dir: &Path) -> Result<Section<AtomicMeasure>> {
    let meta: SectionMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    if meta.kind != AtomicMeasure::KIND {
        return Err(Error::InvalidArgument(format!("section kind {} is not a probability section", meta.kind)));
    }
    let mut r = csv::Reader::from_path(dir.join("grid.csv"))?;
    let nodes: Vec<f64> = r
        .records()
        .map(|rec| {
            let rec = rec?;
            rec[0].parse::<f64>().map_err(|e| Error::InvalidArgument(format!("grid node: {e}")))
        })
        .collect::<Result<_>>()?;
    if nodes.len() != meta.grid.m {
        return Err(Error::GridMismatch(format!("meta lists {} nodes, grid.csv has {}", meta.grid.m, nodes.len())));
    }
    let grid = OmegaGrid::from_nodes(meta.grid.lo, meta.grid.hi, nodes)?;
    if meta.constant {
        return Ok(Section::constant(grid, read_atoms(&dir.join("node_0.csv"))?));
    }
    let values = (0..grid.len()).map(|j| read_atoms(&dir.join(format!("node_{j}.csv")))).collect::<Result<Vec<_>>>()?;
    Section::new(grid, values)
}

/// Convergence history as `iter,dist,ratio`; the first ratio is empty.
pub fn write_convergence(path: &Path, report: &ConvergenceReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iter", "dist", "ratio"])?;
    for (i, (d, r)) in report.distances.iter().zip(report.ratios()).enumerate() {
        w.write_record([(i + 1).to_string(), num(*d), num(r)])?;
    }
    w.flush()?;
    Ok(())
}

/// Return-time survival table `k,survival,count`.
pub fn write_tails(path: &Path, rows: &[TailRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["k", "survival", "count"])?;
    for r in rows {
        w.write_record([r.k.to_string(), num(r.survival), r.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Density table `omega,rho[,rho_dot]` on the density grid.
pub fn write_density(path: &Path, density: &BaseDensity) -> Result<()> {
    let mut w = writer(path)?;
    let nodes = density.grid().nodes();
    match density.derivative() {
        Some(d) => {
            w.write_record(["omega", "rho", "rho_dot"])?;
            for ((x, r), rd) in nodes.iter().zip(density.values()).zip(d) {
                w.write_record([num(*x), num(*r), num(*rd)])?;
            }
        }
        None => {
            w.write_record(["omega", "rho"])?;
            for (x, r) in nodes.iter().zip(density.values()) {
                w.write_record([num(*x), num(*r)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Response of one observable by the resolvent route, with the
/// finite-difference cross-check and, where known, the closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseReport {
    pub observable: Observable,
    pub alpha0: f64,
    pub epsilon: f64,
    pub value_resolvent: f64,
    pub value_fd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value_analytic: Option<f64>,
    pub tail_bound: f64,
    #[serde(rename = "N_neumann")]
    pub n_neumann: usize,
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}
