use thiserror::Error;

use crate::measure::Point;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("atom {index} at ({:.6}, {:.6}) lies outside the domain box", point[0], point[1])]
    DomainViolation { index: usize, point: Point },
    #[error("base point {0} lies outside the base interval [{1}, {2}]")]
    OutsideBase(f64, f64, f64),
    #[error("support of {size} atoms exceeds the exact 2D transport capacity {capacity}; compact the measures first")]
    Capacity { size: usize, capacity: usize },
    #[error("compaction mode {0} is not supported for signed measures")]
    UnsupportedMode(&'static str),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("system is not contracting: certificate {0} >= 1")]
    NotContracting(f64),
    #[error("no convergence after {iterations} iterations (last distance {distance:e})")]
    NoConvergence { iterations: usize, distance: f64 },
    #[error("incomplete variation data: {0}")]
    Incomplete(String),
    #[error("truncation: {0}")]
    Truncation(String),
    #[error("return-time iteration cap {cap} exceeded from omega = {omega}")]
    Escape { omega: f64, cap: u64 },
    #[error("insufficient tail data: {0}")]
    InsufficientData(String),
    #[error("transport solver failed: {0}")]
    Solver(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
