use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::linear_fit;
use crate::systems::Lsv;

const BLOCK: usize = 4096;
const CAP: u64 = 10_000_000;
/// Smallest count `#{τ > k}` admitted to the slope fit.
const MIN_COUNT: u64 = 100;

/// One row of the empirical survival function.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TailRow {
    pub k: u64,
    pub survival: f64,
    pub count: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailStatistics {
    pub alpha: f64,
    pub samples: usize,
    pub seed: u64,
    /// Log-log slope of `m{τ > k}` over the fitted range.
    pub slope: f64,
    pub intercept: f64,
    /// Largest `k` with at least `MIN_COUNT` survivors.
    pub k_star: u64,
    pub rows: Vec<TailRow>,
}

/// Return times of uniform samples on `[½, 1]`; sample `j` uses the block
/// stream `j / 4096` of a ChaCha generator seeded with `seed`, so results do
/// not depend on the thread count.
pub fn sample_return_times(alpha: f64, samples: usize, seed: u64) -> Result<Vec<u64>> {
    let lsv = Lsv::new(alpha);
    let blocks = samples.div_ceil(BLOCK);
    let parts: Vec<Result<Vec<u64>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let n = BLOCK.min(samples - b * BLOCK);
            (0..n)
                .map(|_| {
                    let w = 0.5 + 0.5 * rng.gen::<f64>();
                    lsv.return_time(w, CAP).ok_or(Error::Escape { omega: w, cap: CAP })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(samples);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Empirical survival function of the return time and its log-log slope over
/// log-spaced `k ∈ [10, k*]`.
pub fn tail_statistics(alpha: f64, samples: usize, seed: u64) -> Result<TailStatistics> {
    if samples < 100_000 {
        return Err(Error::InsufficientData(format!("{samples} samples, at least 100000 required")));
    }
    let mut times = sample_return_times(alpha, samples, seed)?;
    times.sort_unstable();
    let survivors = |k: u64| (times.len() - times.partition_point(|&t| t <= k)) as u64;
    let mut ks = Vec::new();
    let mut x = 1.0f64;
    let top = *times.last().expect("nonempty");
    while (x as u64) <= top {
        let k = x.round() as u64;
        if ks.last() != Some(&k) {
            ks.push(k);
        }
        x *= 10f64.powf(0.05);
    }
    let rows: Vec<TailRow> = ks
        .iter()
        .map(|&k| {
            let c = survivors(k);
            TailRow { k, survival: c as f64 / samples as f64, count: c }
        })
        .collect();
    let k_star = rows.iter().filter(|r| r.count >= MIN_COUNT).map(|r| r.k).max().unwrap_or(0);
    let (lx, ly): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.k >= 10 && r.k <= k_star)
        .map(|r| ((r.k as f64).ln(), r.survival.ln()))
        .unzip();
    if lx.len() < 3 {
        return Err(Error::InsufficientData(format!("tail range [10, {k_star}] has {} points", lx.len())));
    }
    let (slope, intercept) = linear_fit(&lx, &ly);
    Ok(TailStatistics { alpha, samples, seed, slope, intercept, k_star, rows })
}
