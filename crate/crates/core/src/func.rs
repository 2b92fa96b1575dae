//! Gridded functions on a compact interval.
//!
//! A [`Grid`] carries abscissae together with quadrature weights, so that
//! `Σ w_i f_i g_i` approximates the L² inner product `∫ f g`. Curves share
//! their grid through an [`Arc`]; two curves are compatible when they point
//! at the same grid or at grids with identical points and weights.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to decide whether a grid is uniformly spaced.
const UNIFORM_RTOL: f64 = 1e-9;

/// Quadrature rule used to build weights for a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    /// Composite trapezoid rule: half weights at the endpoints.
    #[default]
    Trapezoid,
    /// Trapezoid rule with fourth-order end corrections
    /// (weights 17/48, 59/48, 43/48, 49/48 at each end). Needs ≥ 8 points;
    /// exact for cubics, all weights positive.
    EndCorrected,
}

const END_CORRECTION: [f64; 4] = [17.0 / 48.0, 59.0 / 48.0, 43.0 / 48.0, 49.0 / 48.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
    spacing: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl TryFrom<RawGrid> for Grid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        Grid::with_weights(raw.points, raw.weights)
    }
}

impl From<Grid> for RawGrid {
    fn from(g: Grid) -> Self {
        RawGrid {
            points: g.points,
            weights: g.weights,
        }
    }
}

impl Grid {
    /// Uniform grid on `[a, b]` with trapezoid weights.
    pub fn uniform(a: f64, b: f64, count: usize) -> Result<Self> {
        Self::uniform_with(a, b, count, Quadrature::Trapezoid)
    }

    pub fn uniform_with(a: f64, b: f64, count: usize, rule: Quadrature) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidGrid(format!("non-finite bounds [{a}, {b}]")));
        }
        if b <= a {
            return Err(Error::InvalidGrid(format!("empty interval [{a}, {b}]")));
        }
        if count < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 points, got {count}")));
        }
        if rule == Quadrature::EndCorrected && count < 8 {
            return Err(Error::InvalidGrid(format!(
                "end-corrected quadrature needs at least 8 points, got {count}"
            )));
        }
        let h = (b - a) / (count - 1) as f64;
        let points: Vec<f64> = (0..count)
            .map(|i| if i == count - 1 { b } else { a + i as f64 * h })
            .collect();
        let mut weights = vec![h; count];
        match rule {
            Quadrature::Trapezoid => {
                weights[0] = 0.5 * h;
                weights[count - 1] = 0.5 * h;
            }
            Quadrature::EndCorrected => {
                for (i, c) in END_CORRECTION.iter().enumerate() {
                    weights[i] = c * h;
                    weights[count - 1 - i] = c * h;
                }
            }
        }
        Ok(Grid {
            points,
            weights,
            spacing: Some(h),
        })
    }

    /// Grid with trapezoid weights for arbitrary (possibly non-uniform) points.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        validate_points(&points)?;
        let n = points.len();
        let mut weights = vec![0.0; n];
        for i in 0..n - 1 {
            let half = 0.5 * (points[i + 1] - points[i]);
            weights[i] += half;
            weights[i + 1] += half;
        }
        Self::with_weights(points, weights)
    }

    pub fn with_weights(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        validate_points(&points)?;
        if weights.len() != points.len() {
            return Err(Error::InvalidGrid(format!(
                "{} weights for {} points",
                weights.len(),
                points.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidGrid("weights must be positive and finite".into()));
        }
        let length = points[points.len() - 1] - points[0];
        let total: f64 = weights.iter().sum();
        if (total - length).abs() > 1e-9 * length.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "weights sum to {total}, domain length is {length}"
            )));
        }
        let spacing = detect_spacing(&points);
        Ok(Grid {
            points,
            weights,
            spacing,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn length(&self) -> f64 {
        self.end() - self.start()
    }

    /// Common spacing when the grid is uniform.
    pub fn spacing(&self) -> Option<f64> {
        self.spacing
    }

    pub fn is_uniform(&self) -> bool {
        self.spacing.is_some()
    }

    /// Index of the grid point closest to `x`.
    pub fn nearest_index(&self, x: f64) -> usize {
        match self.points.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.points.len() => self.points.len() - 1,
            Err(i) => {
                if x - self.points[i - 1] <= self.points[i] - x {
                    i - 1
                } else {
                    i
                }
            }
        }
    }
}

fn validate_points(points: &[f64]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::InvalidGrid(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidGrid("non-finite abscissa".into()));
    }
    if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!(
            "abscissae not strictly increasing at index {}",
            i + 1
        )));
    }
    Ok(())
}

fn detect_spacing(points: &[f64]) -> Option<f64> {
    let n = points.len();
    let h = (points[n - 1] - points[0]) / (n - 1) as f64;
    points
        .windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= UNIFORM_RTOL * h)
        .then_some(h)
}

/// True when both references denote the same discretisation.
pub fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// A function sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidCurve(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidCurve(format!("non-finite value at index {i}")));
        }
        Ok(Curve { grid, values })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().iter().map(|&x| f(x)).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![0.0; grid.len()];
        Curve { grid, values }
    }

    pub(crate) fn from_parts_unchecked(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Curve { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Curve {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Curve {
        Curve {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &Curve, beta: f64) -> Result<Curve> {
        self.check_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Ok(Curve {
            grid: Arc::clone(&self.grid),
            values,
        })
    }

    pub fn sub(&self, other: &Curve) -> Result<Curve> {
        self.combine(1.0, other, -1.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_grid(&self, other: &Curve) -> Result<()> {
        if same_grid(&self.grid, &other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn inner_product(&self, other: &Curve) -> Result<f64> {
        self.check_grid(other)?;
        Ok(weighted_dot(self.grid.weights(), &self.values, &other.values))
    }

    pub fn l2_norm(&self) -> f64 {
        weighted_dot(self.grid.weights(), &self.values, &self.values).sqrt()
    }

    /// Central differences inside, second-order one-sided differences at the
    /// two endpoints. Exact for quadratics everywhere.
    pub fn derivative(&self) -> Result<Curve> {
        let h = self.grid.spacing().ok_or(Error::NonUniformGrid)?;
        let f = &self.values;
        let n = f.len();
        let mut d = vec![0.0; n];
        d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
        d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
        for i in 1..n - 1 {
            d[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
        }
        Ok(Curve {
            grid: Arc::clone(&self.grid),
            values: d,
        })
    }
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

pub fn make_grid(a: f64, b: f64, count: usize) -> Result<Grid> {
    Grid::uniform(a, b, count)
}

pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    f.inner_product(g)
}

pub fn l2_norm(f: &Curve) -> f64 {
    f.l2_norm()
}

pub fn derivative(f: &Curve) -> Result<Curve> {
    f.derivative()
}

/// `n` curves on one shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    grid: Arc<Grid>,
    curves: Vec<Curve>,
}

impl Sample {
    pub fn new(curves: Vec<Curve>) -> Result<Self> {
        let first = curves.first().ok_or(Error::TooFewCurves {
            required: 1,
            actual: 0,
        })?;
        let grid = Arc::clone(first.grid());
        if curves.iter().any(|c| !same_grid(&grid, c.grid())) {
            return Err(Error::GridMismatch);
        }
        Ok(Sample { grid, curves })
    }

    /// Builds a sample from raw value rows on `grid`.
    pub fn from_rows(grid: Arc<Grid>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let curves = rows
            .into_iter()
            .map(|r| Curve::new(Arc::clone(&grid), r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(curves)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn n(&self) -> usize {
        self.curves.len()
    }

    /// Sample made of the curves at `indices` (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Sample {
        Sample {
            grid: Arc::clone(&self.grid),
            curves: indices.iter().map(|&i| self.curves[i].clone()).collect(),
        }
    }

    pub fn mean_curve(&self) -> Curve {
        let p = self.grid.len();
        let mut acc = vec![0.0; p];
        for c in &self.curves {
            for (a, v) in acc.iter_mut().zip(c.values()) {
                *a += v;
            }
        }
        let inv = 1.0 / self.n() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Curve::from_parts_unchecked(Arc::clone(&self.grid), acc)
    }

    pub fn center(&self) -> Sample {
        let mean = self.mean_curve();
        let curves = self
            .curves
            .iter()
            .map(|c| {
                let values = c
                    .values()
                    .iter()
                    .zip(mean.values())
                    .map(|(v, m)| v - m)
                    .collect();
                Curve::from_parts_unchecked(Arc::clone(&self.grid), values)
            })
            .collect();
        Sample {
            grid: Arc::clone(&self.grid),
            curves,
        }
    }
}

pub fn mean_curve(s: &Sample) -> Curve {
    s.mean_curve()
}

pub fn center(s: &Sample) -> Sample {
    s.center()
}
