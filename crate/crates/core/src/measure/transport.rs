//! Exact Wasserstein-1 distances between atomic measures.

use super::atoms::{AtomicMeasure, FibreMeasure, SignedAtomicMeasure};
use super::{distance, Point};
use crate::error::{Error, Result};
use crate::numeric::Compensated;

/// Largest support handled by the exact 2D solver.
pub const TRANSPORT_CAPACITY: usize = 1024;

/// Exact `W1(μ, ν)`: CDF integral in 1D, transportation simplex in 2D.
pub fn wasserstein1(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::InvalidArgument("measures live in different dimensions".into()));
    }
    w1_signed_pair(mu.dim(), mu.points(), mu.weights(), nu.points(), nu.weights())
}

/// Kantorovich–Rubinstein norm `sup_{Lip φ ≤ 1} ⟨ξ, φ⟩` of a 1D signed measure
/// of zero mass, `∫ |F_ξ|`.
pub fn kantorovich_norm_1d(xi: &SignedAtomicMeasure) -> Result<f64> {
    if xi.dim() != 1 {
        return Err(Error::InvalidArgument("1D measure expected".into()));
    }
    Ok(w1_raw_1d(xi.points(), xi.weights(), &[], &[]))
}

/// Transport distance between two non-negative atom clouds of equal mass.
pub fn w1_signed_pair(dim: usize, pa: &[Point], wa: &[f64], pb: &[Point], wb: &[f64]) -> Result<f64> {
    if dim == 1 {
        Ok(w1_raw_1d(pa, wa, pb, wb))
    } else {
        if pa.len() > TRANSPORT_CAPACITY || pb.len() > TRANSPORT_CAPACITY {
            return Err(Error::Capacity { size: pa.len().max(pb.len()), capacity: TRANSPORT_CAPACITY });
        }
        w1_2d(pa, wa, pb, wb)
    }
}

/// `∫ |F_a − F_b| dx` for 1D clouds (signed weights allowed).
pub(crate) fn w1_raw_1d(pa: &[Point], wa: &[f64], pb: &[Point], wb: &[f64]) -> f64 {
    let mut ev: Vec<(f64, f64)> = Vec::with_capacity(pa.len() + pb.len());
    ev.extend(pa.iter().zip(wa).map(|(x, w)| (x[0], *w)));
    ev.extend(pb.iter().zip(wb).map(|(x, w)| (x[0], -*w)));
    ev.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf = Compensated::new();
    let mut acc = Compensated::new();
    for k in 0..ev.len() {
        cdf.add(ev[k].1);
        if k + 1 < ev.len() {
            let gap = ev[k + 1].0 - ev[k].0;
            if gap > 0.0 {
                acc.add(cdf.value().abs() * gap);
            }
        }
    }
    acc.value()
}

fn w1_2d(pa: &[Point], wa: &[f64], pb: &[Point], wb: &[f64]) -> Result<f64> {
    // Common mass at identical locations stays in place in an optimal plan.
    let mut ev: Vec<(Point, f64)> = Vec::with_capacity(pa.len() + pb.len());
    ev.extend(pa.iter().zip(wa).map(|(x, w)| (*x, *w)));
    ev.extend(pb.iter().zip(wb).map(|(x, w)| (*x, -*w)));
    ev.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(a.0[1].total_cmp(&b.0[1])));
    let mut supply: Vec<(Point, f64)> = Vec::new();
    let mut demand: Vec<(Point, f64)> = Vec::new();
    let mut k = 0;
    while k < ev.len() {
        let x = ev[k].0;
        let mut net = 0.0;
        while k < ev.len() && ev[k].0 == x {
            net += ev[k].1;
            k += 1;
        }
        if net > 0.0 {
            supply.push((x, net));
        } else if net < 0.0 {
            demand.push((x, -net));
        }
    }
    let s: f64 = supply.iter().map(|t| t.1).sum();
    let d: f64 = demand.iter().map(|t| t.1).sum();
    if s <= 0.0 || d <= 0.0 {
        return Ok(0.0);
    }
    let scale = s / d;
    demand.iter_mut().for_each(|t| t.1 *= scale);
    transport_cost(&supply, &demand)
}

/// Minimum-cost transport between two weighted point sets of equal mass under
/// the Euclidean ground cost (transportation simplex).
pub(crate) fn transport_cost(sup: &[(Point, f64)], dem: &[(Point, f64)]) -> Result<f64> {
    let n = sup.len();
    let m = dem.len();
    if n == 1 || m == 1 {
        let mut acc = Compensated::new();
        for a in sup {
            for b in dem {
                acc.add(if n == 1 { b.1 } else { a.1 } * distance(a.0, b.0));
            }
        }
        return Ok(acc.value());
    }
    let cost: Vec<f64> = (0..n * m).map(|f| distance(sup[f / m].0, dem[f % m].0)).collect();
    let cmax = cost.iter().cloned().fold(0.0, f64::max);
    let eps = 1e-13 * (1.0 + cmax);

    // least-cost initial basis: every allocation crosses out one line
    let mut order: Vec<u32> = (0..(n * m) as u32).collect();
    order.sort_by(|&a, &b| cost[a as usize].total_cmp(&cost[b as usize]).then(a.cmp(&b)));
    let mut ra: Vec<f64> = sup.iter().map(|t| t.1).collect();
    let mut rb: Vec<f64> = dem.iter().map(|t| t.1).collect();
    let mut row_done = vec![false; n];
    let mut col_done = vec![false; m];
    let (mut rows_left, mut cols_left) = (n, m);
    let mut cells: Vec<(usize, usize, f64)> = Vec::with_capacity(n + m - 1);
    for &f in &order {
        if rows_left == 0 || cols_left == 0 {
            break;
        }
        let (i, j) = (f as usize / m, f as usize % m);
        if row_done[i] || col_done[j] {
            continue;
        }
        let q = ra[i].min(rb[j]).max(0.0);
        cells.push((i, j, q));
        if rows_left == 1 && cols_left == 1 {
            rows_left = 0;
            cols_left = 0;
        } else if (ra[i] <= rb[j] && rows_left > 1) || cols_left == 1 {
            row_done[i] = true;
            rows_left -= 1;
            rb[j] -= q;
        } else {
            col_done[j] = true;
            cols_left -= 1;
            ra[i] -= q;
        }
    }
    if cells.len() != n + m - 1 {
        return Err(Error::Solver(format!("initial basis has {} cells, expected {}", cells.len(), n + m - 1)));
    }

    let nodes = n + m;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (c, &(i, j, _)) in cells.iter().enumerate() {
        adj[i].push(c);
        adj[n + j].push(c);
    }
    let mut pot = vec![0.0; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut queue = Vec::with_capacity(nodes);
    let block = ((n * m) as f64).sqrt().ceil().max(32.0) as usize;
    let mut cursor = 0usize;
    let max_pivots = 200 * (n + m) * (n + m).max(50);
    let mut pivots = 0usize;

    loop {
        // potentials: u_i + v_j = c_ij on basic cells, u_0 = 0
        let mut seen = vec![false; nodes];
        queue.clear();
        queue.push(0);
        seen[0] = true;
        pot[0] = 0.0;
        let mut h = 0;
        while h < queue.len() {
            let a = queue[h];
            h += 1;
            for &c in &adj[a] {
                let (i, j, _) = cells[c];
                let b = if a == i { n + j } else { i };
                if !seen[b] {
                    seen[b] = true;
                    pot[b] = cost[i * m + j] - pot[a];
                    queue.push(b);
                }
            }
        }

        // block-search pricing
        let total = n * m;
        let mut best = (0.0, usize::MAX);
        let mut scanned = 0;
        while scanned < total {
            let end = (scanned + block).min(total);
            for _ in scanned..end {
                let f = cursor;
                cursor += 1;
                if cursor == total {
                    cursor = 0;
                }
                let (i, j) = (f / m, f % m);
                let rc = cost[f] - pot[i] - pot[n + j];
                if rc < best.0 {
                    best = (rc, f);
                }
            }
            scanned = end;
            if best.0 < -eps {
                break;
            }
        }
        if best.0 >= -eps {
            break;
        }
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Solver("pivot limit reached".into()));
        }
        let (ei, ej) = (best.1 / m, best.1 % m);

        // tree path from row ei to column ej
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        queue.clear();
        queue.push(ei);
        let mut visited = vec![false; nodes];
        visited[ei] = true;
        let target = n + ej;
        let mut h = 0;
        while h < queue.len() && !visited[target] {
            let a = queue[h];
            h += 1;
            for &c in &adj[a] {
                let (i, j, _) = cells[c];
                let b = if a == i { n + j } else { i };
                if !visited[b] {
                    visited[b] = true;
                    parent[b] = c;
                    queue.push(b);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while node != ei {
            let c = parent[node];
            path.push(c);
            let (i, j, _) = cells[c];
            node = if node == i { n + j } else { i };
        }
        // path[0] touches column ej; odd positions (0-based even) lose flow
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &c) in path.iter().enumerate() {
            if k % 2 == 0 && cells[c].2 < theta {
                theta = cells[c].2;
                leave = c;
            }
        }
        for (k, &c) in path.iter().enumerate() {
            if k % 2 == 0 {
                cells[c].2 -= theta;
            } else {
                cells[c].2 += theta;
            }
        }
        let (li, lj, _) = cells[leave];
        adj[li].retain(|&c| c != leave);
        adj[n + lj].retain(|&c| c != leave);
        cells[leave] = (ei, ej, theta);
        adj[ei].push(leave);
        adj[n + ej].push(leave);
    }

    let mut acc = Compensated::new();
    for &(i, j, q) in &cells {
        acc.add(q.max(0.0) * cost[i * m + j]);
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assignment_oracle(a: &[Point], b: &[Point]) -> f64 {
        // exhaustive search over permutations (uniform weights)
        fn rec(k: usize, a: &[Point], b: &[Point], used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if k == a.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..b.len() {
                if !used[j] {
                    used[j] = true;
                    rec(k + 1, a, b, used, acc + distance(a[k], b[j]), best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, a, b, &mut vec![false; b.len()], 0.0, &mut best);
        best / a.len() as f64
    }

    #[test]
    fn simplex_matches_assignment_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in 2..=6 {
            for _ in 0..20 {
                let a: Vec<Point> = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
                let b: Vec<Point> = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
                let w = vec![1.0 / n as f64; n];
                let got = w1_2d(&a, &w, &b, &w).unwrap();
                let want = assignment_oracle(&a, &b);
                assert!((got - want).abs() < 1e-12, "n={n}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn collinear_2d_matches_1d() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(2..40);
            let m = rng.gen_range(2..40);
            let a: Vec<Point> = (0..n).map(|_| [rng.gen_range(-1.0..1.0), 0.0]).collect();
            let b: Vec<Point> = (0..m).map(|_| [rng.gen_range(-1.0..1.0), 0.0]).collect();
            let mut wa: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let mut wb: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
            let sa: f64 = wa.iter().sum();
            let sb: f64 = wb.iter().sum();
            wa.iter_mut().for_each(|w| *w /= sa);
            wb.iter_mut().for_each(|w| *w /= sb);
            let d2 = w1_2d(&a, &wa, &b, &wb).unwrap();
            let d1 = w1_raw_1d(&a, &wa, &b, &wb);
            assert!((d1 - d2).abs() < 1e-12, "{d1} vs {d2}");
        }
    }
}
