//! Small numeric helpers shared by the modules.

/// Neumaier compensated accumulator. Summation order is the call order, so
/// results only depend on the sequence of inputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn csum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = Compensated::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Trapezoid rule on sorted abscissae.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mut acc = Compensated::new();
    for k in 1..x.len() {
        acc.add(0.5 * (x[k] - x[k - 1]) * (y[k] + y[k - 1]));
    }
    acc.value()
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ordinary least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = csum(x.iter().copied()) / n;
    let my = csum(y.iter().copied()) / n;
    let sxy = csum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = csum(x.iter().map(|a| (a - mx) * (a - mx)));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut v = vec![1.0e16, 1.0, -1.0e16];
        v.extend(std::iter::repeat(1.0e-3).take(1000));
        assert!((csum(v) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let x = [0.0, 0.3, 1.0];
        let y = [1.0, 1.6, 3.0];
        assert!((trapezoid(&x, &y) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn median_and_fit() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (s, c) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((s - 2.0).abs() < 1e-14 && (c - 1.0).abs() < 1e-14);
    }
}
