//! Real polynomials written in powers of `(x − center)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    pub center: f64,
    /// `coeffs[k]` multiplies `(x − center)^k`.
    pub coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(center: f64, coeffs: Vec<f64>) -> Self {
        Poly { center, coeffs }
    }

    /// `Π (x − r)` for the given roots, centred at `center`.
    pub fn from_roots(center: f64, roots: &[f64]) -> Self {
        roots.iter().fold(Poly::new(center, vec![1.0]), |p, r| {
            p.mul(&Poly::new(center, vec![center - r, 1.0]))
        })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = x - self.center;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn derivative(&self) -> Poly {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c)
            .collect();
        Poly::new(self.center, coeffs)
    }

    /// `r`-th derivative evaluated at `x`.
    pub fn derivative_at(&self, r: usize, x: f64) -> f64 {
        (0..r).fold(self.clone(), |p, _| p.derivative()).eval(x)
    }

    pub fn scaled(&self, c: f64) -> Poly {
        Poly::new(self.center, self.coeffs.iter().map(|v| c * v).collect())
    }

    /// `alpha * self + beta * other`; both must share the centre.
    pub fn combine(&self, alpha: f64, other: &Poly, beta: f64) -> Poly {
        assert_eq!(self.center, other.center, "polynomials must share a centre");
        let len = self.coeffs.len().max(other.coeffs.len());
        let at = |p: &Poly, k: usize| p.coeffs.get(k).copied().unwrap_or(0.0);
        Poly::new(
            self.center,
            (0..len).map(|k| alpha * at(self, k) + beta * at(other, k)).collect(),
        )
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        assert_eq!(self.center, other.center, "polynomials must share a centre");
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Poly::new(self.center, Vec::new());
        }
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(self.center, out)
    }

    /// Exact `∫_a^b p(x) dx`.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let anti = |x: f64| {
            let t = x - self.center;
            self.coeffs
                .iter()
                .enumerate()
                .rev()
                .fold(0.0, |acc, (k, c)| acc * t + c / (k + 1) as f64)
                * t
        };
        anti(b) - anti(a)
    }

    /// `∫_a^b p²`.
    pub fn norm_squared(&self, a: f64, b: f64) -> f64 {
        self.mul(self).integrate(a, b)
    }

    fn trimmed(&self) -> Poly {
        let keep = self.coeffs.iter().rposition(|c| *c != 0.0).map_or(0, |i| i + 1);
        Poly::new(self.center, self.coeffs[..keep].to_vec())
    }

    fn sup_on(&self, a: f64, b: f64) -> f64 {
        (0..=SCAN)
            .map(|i| self.eval(a + (b - a) * i as f64 / SCAN as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Real roots in the open interval `(a, b)`, multiple roots reported once.
    ///
    /// Recurses on the derivative: between consecutive critical points the
    /// polynomial is monotone, so each piece holds at most one simple root
    /// (found by bisection); a critical point where the polynomial vanishes
    /// to working precision is a multiple root.
    pub fn roots_in(&self, a: f64, b: f64) -> Vec<f64> {
        let q = self.trimmed();
        let mut roots = Vec::new();
        match q.coeffs.len() {
            0 | 1 => {}
            2 => {
                let x = q.center - q.coeffs[0] / q.coeffs[1];
                if a < x && x < b {
                    roots.push(x);
                }
            }
            _ => {
                let tol = ROOT_RTOL * q.sup_on(a, b);
                let crit = q.derivative().roots_in(a, b);
                let mut breaks = Vec::with_capacity(crit.len() + 2);
                breaks.push(a);
                breaks.extend(&crit);
                breaks.push(b);
                for c in &crit {
                    if q.eval(*c).abs() <= tol {
                        roots.push(*c);
                    }
                }
                for w in breaks.windows(2) {
                    let (mut lo, mut hi) = (w[0], w[1]);
                    let (flo, fhi) = (q.eval(lo), q.eval(hi));
                    if flo.abs() <= tol || fhi.abs() <= tol || flo.signum() == fhi.signum() {
                        continue;
                    }
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        if q.eval(mid).signum() == flo.signum() {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    roots.push(0.5 * (lo + hi));
                }
            }
        }
        roots.sort_by(f64::total_cmp);
        roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-9);
        roots
    }

    /// Stationary points in `(a, b)` as `(location, order r, A)` where the
    /// local expansion is `p(u) ≈ p(u₀) + A (u − u₀)^r`.
    pub fn stationary_points(&self, a: f64, b: f64) -> Vec<(f64, usize, f64)> {
        let d = self.derivative();
        d.roots_in(a, b)
            .into_iter()
            .filter_map(|u| {
                let mut q = d.clone();
                let mut factorial = 1.0;
                for r in 2..=self.degree() {
                    q = q.derivative();
                    factorial *= r as f64;
                    let v = q.eval(u);
                    if v.abs() > ORDER_RTOL * q.sup_on(a, b) {
                        return Some((u, r, v / factorial));
                    }
                }
                None
            })
            .collect()
    }
}

const SCAN: usize = 1000;
const ROOT_RTOL: f64 = 1e-11;
const ORDER_RTOL: f64 = 1e-7;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn arithmetic() {
        let p = Poly::from_roots(0.5, &[0.2, 0.8]);
        assert_relative_eq!(p.eval(0.2), 0.0, epsilon = 1e-15);
        assert_relative_eq!(p.eval(1.0), 0.8 * 0.2, epsilon = 1e-15);
        assert_eq!(p.degree(), 2);
        let d = p.derivative();
        assert_relative_eq!(d.eval(0.5), 0.0, epsilon = 1e-15);
        assert_relative_eq!(p.derivative_at(2, 0.1), 2.0, epsilon = 1e-15);
        let q = p.combine(2.0, &Poly::new(0.5, vec![1.0]), -1.0);
        assert_relative_eq!(q.eval(0.0), 2.0 * 0.16 - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_integrals() {
        // ∫₀¹ (1.5x)² = 0.75
        let p = Poly::new(0.0, vec![0.0, 1.5]);
        assert_relative_eq!(p.norm_squared(0.0, 1.0), 0.75, epsilon = 1e-15);
        let cubic = Poly::new(0.5, vec![0.0, 0.0, 0.0, 8.0 * 7f64.sqrt()]);
        assert_relative_eq!(cubic.norm_squared(0.0, 1.0), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn simple_and_multiple_roots() {
        let p = Poly::from_roots(0.5, &[0.1, 0.3, 0.3, 0.7]);
        let r = p.roots_in(0.0, 1.0);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([0.1, 0.3, 0.7]) {
            assert_relative_eq!(*got, want, epsilon = 1e-9);
        }
        assert!(Poly::new(0.0, vec![1.0, 0.0, 1.0]).roots_in(-5.0, 5.0).is_empty());
        assert!(Poly::new(0.0, vec![2.0]).roots_in(0.0, 1.0).is_empty());
    }

    #[test]
    fn stationary_orders() {
        // (t² − 0.09)³ around 0.5: minimum at 0.5, shoulders at 0.2 and 0.8
        let base = Poly::from_roots(0.5, &[0.2, 0.8]);
        let p = base.mul(&base).mul(&base);
        let s = p.stationary_points(0.0, 1.0);
        assert_eq!(s.len(), 3);
        assert_relative_eq!(s[0].0, 0.2, epsilon = 1e-9);
        assert_eq!(s[0].1, 3);
        assert_relative_eq!(s[0].2, -0.216, epsilon = 1e-9);
        assert_relative_eq!(s[1].0, 0.5, epsilon = 1e-12);
        assert_eq!(s[1].1, 2);
        assert_relative_eq!(s[1].2, 0.0243, epsilon = 1e-12);
        assert_eq!(s[2].1, 3);
        assert_relative_eq!(s[2].2, 0.216, epsilon = 1e-9);
        // x⁴ has a fourth-order minimum
        let quartic = Poly::new(0.5, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(quartic.stationary_points(0.0, 1.0), vec![(0.5, 4, 1.0)]);
    }
}
