/// Liverani–Saussol–Vaienti map `f(ω) = ω(1 + (2ω)^α)` on `[0, ½]`,
/// `2ω − 1` on `(½, 1]`, with a neutral fixed point at `0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lsv {
    pub alpha: f64,
}

impl Lsv {
    pub fn new(alpha: f64) -> Self {
        Self { alpha }
    }

    pub fn left(&self, u: f64) -> f64 {
        u * (1.0 + (2.0 * u).powf(self.alpha))
    }

    pub fn left_derivative(&self, u: f64) -> f64 {
        1.0 + (1.0 + self.alpha) * (2.0 * u).powf(self.alpha)
    }

    /// `∂_α f0(u) = u (2u)^α ln 2u`.
    pub fn left_dalpha(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        u * (2.0 * u).powf(self.alpha) * (2.0 * u).ln()
    }

    pub fn apply(&self, u: f64) -> f64 {
        if u <= 0.5 {
            self.left(u)
        } else {
            2.0 * u - 1.0
        }
    }

    /// Inverse of the left branch on `[0, 1]`: safeguarded Newton iteration in
    /// the bracket `[y/(1 + (2y)^α), min(y, ½)]` followed by two polishing
    /// Newton steps.
    pub fn left_inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        if y >= 1.0 {
            return 0.5;
        }
        let mut lo = y / (1.0 + (2.0 * y).powf(self.alpha));
        let mut hi = y.min(0.5);
        let mut u = 0.5 * (lo + hi);
        for _ in 0..100 {
            let r = self.left(u) - y;
            if r > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let mut next = u - r / self.left_derivative(u);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let done = (next - u).abs() <= 1e-15 * u.max(1e-300) || hi - lo <= 1e-15 * hi;
            u = next;
            if done {
                break;
            }
        }
        for _ in 0..2 {
            let d = self.left_derivative(u);
            let next = u - (self.left(u) - y) / d;
            if next > 0.0 && next <= 0.5 {
                u = next;
            }
        }
        u
    }

    /// Inverse of the right branch.
    pub fn right_inverse(&self, y: f64) -> f64 {
        0.5 * (y + 1.0)
    }

    /// Number of steps for `ω ∈ [½, 1]` to return to `(½, 1]`, with `½`
    /// assigned to the left branch; `None` if it exceeds `cap`.
    pub fn return_time(&self, omega: f64, cap: u64) -> Option<u64> {
        let mut w = self.apply(omega);
        let mut k = 1;
        while w <= 0.5 {
            if k >= cap {
                return None;
            }
            w = self.apply(w);
            k += 1;
        }
        Some(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn left_inverse_roundtrip() {
        for &a in &[0.1, 0.5, 0.9] {
            let f = Lsv::new(a);
            for &y in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.77, 0.999999] {
                let u = f.left_inverse(y);
                assert!((f.left(u) - y).abs() <= 1e-14 * y.max(1e-300) + 1e-16, "a={a} y={y}");
            }
        }
    }

    #[test]
    fn return_time_examples() {
        let f = Lsv::new(0.5);
        assert_eq!(f.return_time(0.75, 100), Some(2));
        assert_eq!(f.return_time(0.9, 100), Some(1));
    }
}
