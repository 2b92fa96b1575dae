//! Gaussian kernel density estimation with least-squares cross-validation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub points: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityEstimate {
    /// Trapezoid integral of the density over its evaluation points.
    pub fn integral(&self) -> f64 {
        self.points
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, f)| 0.5 * (x[1] - x[0]) * (f[0] + f[1]))
            .sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        crate::io::write_columns(w, &["x", "density"], &[&self.points, &self.density])
    }
}

fn std_normal(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no values to smooth".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("values must be finite".into()));
    }
    Ok(())
}

/// 512 points from `min − 5h` to `max + 5h`.
pub fn default_eval_grid(values: &[f64], h: f64) -> Result<Grid> {
    check_values(values)?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Grid::uniform(lo - 5.0 * h, hi + 5.0 * h, 512)
}

/// `(1/(N h)) Σ φ((x − v_i)/h)` on the points of `eval_grid`.
pub fn kde(values: &[f64], h: f64, eval_grid: &Grid) -> Result<DensityEstimate> {
    check_values(values)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    let scale = 1.0 / (values.len() as f64 * h);
    let density = eval_grid
        .points()
        .iter()
        .map(|x| scale * values.iter().map(|v| std_normal((x - v) / h)).sum::<f64>())
        .collect();
    Ok(DensityEstimate {
        points: eval_grid.points().to_vec(),
        density,
        bandwidth: h,
    })
}

/// `∫f̂² − (2/N) Σ f̂₋ᵢ(vᵢ)` in closed form for the Gaussian kernel.
fn lscv_score(values: &[f64], h: f64) -> f64 {
    let n = values.len() as f64;
    let mut conv = 0.0; // Σ_{i,j} φ_{√2}(d/h)
    let mut loo = 0.0; // Σ_{i≠j} φ(d/h)
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            let u = (a - b) / h;
            conv += 2.0 * (-0.25 * u * u).exp();
            loo += 2.0 * std_normal(u);
        }
    }
    conv += n; // diagonal, exp(0) = 1
    let conv = conv / (2.0 * PI.sqrt()) / (n * n * h);
    conv - 2.0 * loo / (n * (n - 1.0) * h)
}

pub const LSCV_CANDIDATES: usize = 50;

/// Minimiser of the LSCV criterion over 50 log-spaced bandwidths in
/// `[range/1000, range]`.
pub fn lscv_bandwidth(values: &[f64]) -> Result<f64> {
    check_values(values)?;
    if values.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs at least 10 values, got {}",
            values.len()
        )));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::InvalidArgument("all values are identical".into()));
    }
    let (first, last) = ((range / 1000.0).ln(), range.ln());
    let step = (last - first) / (LSCV_CANDIDATES - 1) as f64;
    let best = (0..LSCV_CANDIDATES)
        .map(|i| (first + step * i as f64).exp())
        .map(|h| (h, lscv_score(values, h)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("candidate list is nonempty");
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn single_point_is_a_normal_density() {
        let h = 0.02;
        let g = default_eval_grid(&[0.0], h).unwrap();
        let d = kde(&[0.0], h, &g).unwrap();
        for (x, f) in d.points.iter().zip(&d.density) {
            assert_relative_eq!(*f, std_normal(x / h) / h, epsilon = 1e-12);
        }
        assert!((d.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn mass_is_one_and_values_nonnegative() {
        let mut rng = SeedTree::new(3).stream(0);
        let values: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        for h in [0.01, 0.02, 0.1] {
            let g = Grid::uniform(-4.0 * h - 0.01, 1.01 + 4.0 * h, 2000).unwrap();
            let d = kde(&values, h, &g).unwrap();
            assert!(d.density.iter().all(|f| *f >= 0.0));
            assert!((d.integral() - 1.0).abs() < 1e-3, "h = {h}: {}", d.integral());
        }
        assert!(kde(&values, 0.0, &default_eval_grid(&values, 0.1).unwrap()).is_err());
        assert!(kde(&[], 0.1, &Grid::uniform(0.0, 1.0, 10).unwrap()).is_err());
    }

    #[test]
    fn lscv_is_near_the_normal_reference() {
        let mut rng = SeedTree::new(8).stream(0);
        let values: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let reference = 1.06 * sd * n.powf(-0.2);
        let h = lscv_bandwidth(&values).unwrap();
        assert!(h > reference / 3.0 && h < reference * 3.0, "h = {h}, reference {reference}");

        let scaled: Vec<f64> = values.iter().map(|v| 4.0 * v).collect();
        assert_relative_eq!(lscv_bandwidth(&scaled).unwrap(), 4.0 * h, max_relative = 1e-9);
    }

    #[test]
    fn lscv_rejects_degenerate_input() {
        assert!(lscv_bandwidth(&[1.0; 20]).is_err());
        assert!(lscv_bandwidth(&[1.0, 2.0, 3.0]).is_err());
    }
}
