//! Covariance estimation and the discretised eigenproblem.
//!
//! The covariance operator `(Kψ)(u) = ∫ K(u, v) ψ(v) dv` is discretised with
//! the grid's quadrature weights `W`. Its eigenproblem `K W ψ = θ ψ` is
//! symmetrised as `(W^½ K W^½)(W^½ ψ) = θ (W^½ ψ)`, so the eigenfunctions
//! come out orthonormal under the weighted inner product.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::{same_grid, Curve, Grid, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    grid: Arc<Grid>,
    matrix: DMatrix<f64>,
}

impl CovarianceEstimate {
    pub fn new(grid: Arc<Grid>, matrix: DMatrix<f64>) -> Result<Self> {
        let p = grid.len();
        if matrix.nrows() != p || matrix.ncols() != p {
            return Err(Error::InvalidArgument(format!(
                "covariance is {}x{}, grid has {p} points",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite covariance entry".into()));
        }
        Ok(CovarianceEstimate { grid, matrix })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Quadrature approximation of `∫ K(u, u) du`.
    pub fn trace_integral(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.matrix[(i, i)])
            .sum()
    }
}

/// Sample covariance with divisor `n`.
pub fn estimate_covariance(s: &Sample) -> Result<CovarianceEstimate> {
    let n = s.n();
    if n < 2 {
        return Err(Error::TooFewCurves {
            required: 2,
            actual: n,
        });
    }
    let centered = centered_matrix(s);
    let mut k = centered.tr_mul(&centered);
    k /= n as f64;
    symmetrize_upper(&mut k);
    CovarianceEstimate::new(Arc::clone(s.grid()), k)
}

/// Curves minus their mean, one row per curve.
pub(crate) fn centered_matrix(s: &Sample) -> DMatrix<f64> {
    let mean = s.mean_curve();
    let p = s.grid().len();
    DMatrix::from_fn(s.n(), p, |i, j| s.curves()[i].values()[j] - mean.values()[j])
}

fn symmetrize_upper(k: &mut DMatrix<f64>) {
    let p = k.nrows();
    for j in 0..p {
        for i in j + 1..p {
            k[(i, j)] = k[(j, i)];
        }
    }
}

/// Kernel `Σ_j θ_j ψ_j(u) ψ_j(v)` built from known components.
pub fn covariance_from_components(
    eigenvalues: &[f64],
    eigenfunctions: &[Curve],
    grid: &Arc<Grid>,
) -> Result<CovarianceEstimate> {
    if eigenvalues.len() != eigenfunctions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} eigenvalues but {} eigenfunctions",
            eigenvalues.len(),
            eigenfunctions.len()
        )));
    }
    if let Some(t) = eigenvalues.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::InvalidArgument(format!("invalid eigenvalue {t}")));
    }
    if eigenfunctions.iter().any(|f| !same_grid(f.grid(), grid)) {
        return Err(Error::GridMismatch);
    }
    let p = grid.len();
    let mut k = DMatrix::zeros(p, p);
    for (theta, psi) in eigenvalues.iter().zip(eigenfunctions) {
        let v = nalgebra::DVector::from_column_slice(psi.values());
        k.ger(*theta, &v, &v, 1.0);
    }
    symmetrize_upper(&mut k);
    CovarianceEstimate::new(Arc::clone(grid), k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Components with `θ_k <= retention_floor * θ_1` are dropped.
    pub retention_floor: f64,
    /// Consecutive eigenvalues closer than `tie_tolerance * θ_1` are flagged.
    pub tie_tolerance: f64,
    /// Relative asymmetry accepted in the input kernel.
    pub symmetry_tolerance: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            retention_floor: 1e-12,
            tie_tolerance: 1e-8,
            symmetry_tolerance: 1e-12,
        }
    }
}

/// Ordered eigenpairs of a discretised covariance operator.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    grid: Arc<Grid>,
    eigenvalues: Vec<f64>,
    eigenfunctions: Vec<Curve>,
    total_variance: f64,
    near_ties: Vec<usize>,
}

impl EigenSystem {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunctions(&self) -> &[Curve] {
        &self.eigenfunctions
    }

    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }

    /// 1-based access to the `k`-th eigenfunction.
    pub fn component(&self, k: usize) -> Result<&Curve> {
        if k == 0 || k > self.count() {
            return Err(Error::ComponentOutOfRange {
                requested: k,
                available: self.count(),
            });
        }
        Ok(&self.eigenfunctions[k - 1])
    }

    /// Sum of all nonnegative eigenvalues, retained or not.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Zero-based indices `i` where `θ_i` and `θ_{i+1}` are numerically tied.
    pub fn near_ties(&self) -> &[usize] {
        &self.near_ties
    }

    pub fn variance_explained(&self) -> Vec<f64> {
        let total = self.total_variance;
        self.eigenvalues
            .iter()
            .map(|t| if total > 0.0 { t / total } else { 0.0 })
            .collect()
    }

    /// Replaces every eigenfunction by its sign-aligned version against the
    /// matching reference function.
    pub fn align_to(&mut self, references: &[Curve]) -> Result<()> {
        for (f, r) in self.eigenfunctions.iter_mut().zip(references) {
            *f = align_sign(f, r)?;
        }
        Ok(())
    }

    /// `Σ_k θ_k ψ_k(u) ψ_k(v)` over the retained components.
    pub fn reconstruct(&self) -> CovarianceEstimate {
        covariance_from_components(&self.eigenvalues, &self.eigenfunctions, &self.grid)
            .expect("eigen system is internally consistent")
    }
}

pub fn eigendecompose(cov: &CovarianceEstimate, num_components: usize) -> Result<EigenSystem> {
    eigendecompose_with(cov, num_components, &EigenOptions::default())
}

pub fn eigendecompose_with(
    cov: &CovarianceEstimate,
    num_components: usize,
    opts: &EigenOptions,
) -> Result<EigenSystem> {
    let p = cov.grid.len();
    if num_components == 0 || num_components > p {
        return Err(Error::InvalidArgument(format!(
            "num_components must be in 1..={p}, got {num_components}"
        )));
    }
    let k = &cov.matrix;
    let scale = k.amax();
    let asym = (k - k.transpose()).amax();
    if asym > opts.symmetry_tolerance * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Asymmetric(asym));
    }

    let root_w: Vec<f64> = cov.grid.weights().iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(p, p, |i, j| root_w[i] * k[(i, j)] * root_w[j]);
    let (values, vectors) = symmetric_eigen(a)?;

    let order = descending_order(&values);
    let clipped: Vec<f64> = order.iter().map(|&i| values[i].max(0.0)).collect();
    let total_variance = clipped.iter().sum();
    let top = clipped[0];
    let keep = clipped
        .iter()
        .take(num_components)
        .enumerate()
        .take_while(|(i, t)| *i == 0 || **t > opts.retention_floor * top)
        .count();

    let eigenfunctions = order[..keep]
        .iter()
        .map(|&c| {
            let v = vectors.column(c);
            let values = v.iter().zip(&root_w).map(|(x, r)| x / r).collect();
            Curve::from_parts_unchecked(Arc::clone(&cov.grid), values)
        })
        .collect();
    let eigenvalues = clipped[..keep].to_vec();
    let near_ties: Vec<usize> = eigenvalues
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] > 0.0 && w[0] - w[1] < opts.tie_tolerance * top)
        .map(|(i, _)| i)
        .collect();
    for &i in &near_ties {
        log::warn!(
            "eigenvalues {} and {} are numerically tied ({:e}, {:e}); eigenfunctions are not identifiable",
            i + 1,
            i + 2,
            eigenvalues[i],
            eigenvalues[i + 1]
        );
    }

    Ok(EigenSystem {
        grid: Arc::clone(&cov.grid),
        eigenvalues,
        eigenfunctions,
        total_variance,
        near_ties,
    })
}

pub(crate) fn symmetric_eigen(a: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let max_iter = 1000 * a.nrows().max(10);
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, max_iter).ok_or(Error::EigenNoConvergence)?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenNoConvergence);
    }
    Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
}

pub(crate) fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    order
}

/// Flips `candidate` when its inner product with `reference` is negative.
pub fn align_sign(candidate: &Curve, reference: &Curve) -> Result<Curve> {
    let ip = candidate.inner_product(reference)?;
    Ok(if ip < 0.0 {
        candidate.scaled(-1.0)
    } else {
        candidate.clone()
    })
}

/// Projections `ξ_ik = ∫ (X_i − X̄) ψ_k`, one row per curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: DMatrix<f64>,
}

impl ScoreMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_mean(&self, k: usize) -> f64 {
        self.values.column(k).mean()
    }

    /// Divide-by-n variance of column `k`.
    pub fn column_variance(&self, k: usize) -> f64 {
        let col = self.values.column(k);
        let m = col.mean();
        col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64
    }

    /// Divide-by-n covariance between columns `j` and `k`.
    pub fn column_covariance(&self, j: usize, k: usize) -> f64 {
        let a = self.values.column(j);
        let b = self.values.column(k);
        let (ma, mb) = (a.mean(), b.mean());
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / a.len() as f64
    }
}

pub fn scores(s: &Sample, es: &EigenSystem) -> Result<ScoreMatrix> {
    if !same_grid(s.grid(), es.grid()) {
        return Err(Error::GridMismatch);
    }
    let centered = centered_matrix(s);
    let w = s.grid().weights();
    let basis = DMatrix::from_fn(w.len(), es.count(), |u, k| {
        w[u] * es.eigenfunctions()[k].values()[u]
    });
    Ok(ScoreMatrix {
        values: centered * basis,
    })
}

/// Mean curve plus eigen system of a sample.
#[derive(Debug, Clone)]
pub struct Fpca {
    pub mean: Curve,
    pub system: EigenSystem,
}

impl Fpca {
    pub fn fit(s: &Sample, num_components: usize) -> Result<Self> {
        let cov = estimate_covariance(s)?;
        let system = eigendecompose(&cov, num_components.min(s.grid().len()))?;
        Ok(Fpca {
            mean: s.mean_curve(),
            system,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct EigenSystemRecord {
    grid: Grid,
    eigenvalues: Vec<f64>,
    total_variance: f64,
    eigenfunctions: Vec<Vec<f64>>,
}

impl Serialize for EigenSystem {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        EigenSystemRecord {
            grid: (*self.grid).clone(),
            eigenvalues: self.eigenvalues.clone(),
            total_variance: self.total_variance,
            eigenfunctions: self
                .eigenfunctions
                .iter()
                .map(|f| f.values().to_vec())
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EigenSystem {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let rec = EigenSystemRecord::deserialize(deserializer)?;
        if rec.eigenvalues.len() != rec.eigenfunctions.len() {
            return Err(D::Error::custom("eigenvalue/eigenfunction count mismatch"));
        }
        let grid = Arc::new(rec.grid);
        let eigenfunctions = rec
            .eigenfunctions
            .into_iter()
            .map(|v| Curve::new(Arc::clone(&grid), v))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        Ok(EigenSystem {
            grid,
            eigenvalues: rec.eigenvalues,
            eigenfunctions,
            total_variance: rec.total_variance,
            near_ties: Vec::new(),
        })
    }
}

/// CSV with an `x` column followed by one column per eigenfunction.
pub fn write_eigenfunctions_csv<W: std::io::Write>(writer: W, es: &EigenSystem) -> Result<()> {
    let names: Vec<String> = std::iter::once("x".to_string())
        .chain((1..=es.count()).map(|k| format!("psi_{k}")))
        .collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut cols: Vec<&[f64]> = vec![es.grid().points()];
    cols.extend(es.eigenfunctions().iter().map(Curve::values));
    crate::io::write_columns(writer, &names, &cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_grid(count: usize) -> Arc<Grid> {
        Arc::new(Grid::uniform(0.0, 1.0, count).unwrap())
    }

    fn normalized(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Curve {
        let c = Curve::from_fn(grid.clone(), f).unwrap();
        let n = c.l2_norm();
        c.scaled(1.0 / n)
    }

    #[test]
    fn identical_curves_give_zero_covariance() {
        let g = unit_grid(15);
        let f = Curve::from_fn(g, |x| x.cos()).unwrap();
        let s = Sample::new(vec![f.clone(), f.clone(), f]).unwrap();
        let k = estimate_covariance(&s).unwrap();
        assert!(k.matrix().amax() < 1e-15);
    }

    #[test]
    fn single_curve_is_rejected() {
        let g = unit_grid(5);
        let s = Sample::new(vec![Curve::zeros(g)]).unwrap();
        assert!(matches!(
            estimate_covariance(&s),
            Err(Error::TooFewCurves { required: 2, actual: 1 })
        ));
    }

    #[test]
    fn rank_one_sample() {
        let g = unit_grid(40);
        let psi = normalized(&g, |x| (3.0 * x).sin());
        let etas = [0.3, -1.2, 2.0, 0.7, -0.1];
        let s = Sample::new(etas.iter().map(|e| psi.scaled(*e)).collect()).unwrap();
        let k = estimate_covariance(&s).unwrap();
        let mean = etas.iter().sum::<f64>() / 5.0;
        let v = etas.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 5.0;
        for i in 0..40 {
            for j in 0..40 {
                let expected = v * psi.values()[i] * psi.values()[j];
                assert_relative_eq!(k.matrix()[(i, j)], expected, epsilon = 1e-13);
            }
        }

        let es = eigendecompose(&k, 3).unwrap();
        assert_eq!(es.count(), 1, "zero eigenvalues are not retained");
        assert_relative_eq!(es.eigenvalues()[0], v, max_relative = 1e-10);
        let aligned = align_sign(&es.eigenfunctions()[0], &psi).unwrap();
        assert!(aligned.sub(&psi).unwrap().l2_norm() < 1e-10);

        let sc = scores(&s, &es).unwrap();
        let sign = aligned.values()[10].signum() * es.eigenfunctions()[0].values()[10].signum();
        for (i, e) in etas.iter().enumerate() {
            assert_relative_eq!(sign * sc.values()[(i, 0)], e - mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_rank_one_kernel() {
        let g = unit_grid(50);
        let psi = normalized(&g, |x| x * x + 0.3);
        let k = covariance_from_components(&[1.0], std::slice::from_ref(&psi), &g).unwrap();
        let es = eigendecompose_with(
            &k,
            2,
            &EigenOptions {
                retention_floor: -1.0,
                ..EigenOptions::default()
            },
        )
        .unwrap();
        assert_relative_eq!(es.eigenvalues()[0], 1.0, max_relative = 1e-12);
        assert!(es.eigenvalues()[1].abs() < 1e-12);
        let aligned = align_sign(&es.eigenfunctions()[0], &psi).unwrap();
        assert!(aligned.sub(&psi).unwrap().l2_norm() < 1e-10);
    }

    #[test]
    fn empty_components_give_zero_kernel() {
        let g = unit_grid(10);
        let k = covariance_from_components(&[], &[], &g).unwrap();
        assert_eq!(k.matrix().amax(), 0.0);
    }

    #[test]
    fn component_errors() {
        let g = unit_grid(10);
        let f = Curve::zeros(g.clone());
        assert!(covariance_from_components(&[1.0, 2.0], std::slice::from_ref(&f), &g).is_err());
        assert!(covariance_from_components(&[-1.0], &[f], &g).is_err());
    }

    #[test]
    fn asymmetric_kernel_is_rejected() {
        let g = unit_grid(4);
        let mut m = DMatrix::identity(4, 4);
        m[(0, 1)] = 0.5;
        let k = CovarianceEstimate::new(g, m).unwrap();
        assert!(matches!(eigendecompose(&k, 2), Err(Error::Asymmetric(_))));
        let g = unit_grid(4);
        let k = CovarianceEstimate::new(g, DMatrix::identity(4, 4)).unwrap();
        assert!(eigendecompose(&k, 0).is_err());
        assert!(eigendecompose(&k, 5).is_err());
    }

    #[test]
    fn align_sign_rules() {
        let g = unit_grid(11);
        let r = Curve::from_fn(g.clone(), |_| 1.0).unwrap();
        let neg = Curve::from_fn(g.clone(), |_| -0.9).unwrap();
        let pos = Curve::from_fn(g.clone(), |_| 0.9).unwrap();
        assert_eq!(align_sign(&neg, &r).unwrap(), pos);
        assert_eq!(align_sign(&pos, &r).unwrap(), pos);
        // orthogonal: kept as is
        let odd = Curve::from_fn(g, |x| x - 0.5).unwrap();
        assert_eq!(align_sign(&odd, &r).unwrap(), odd);
        let twice = align_sign(&align_sign(&neg, &r).unwrap(), &r).unwrap();
        assert_eq!(twice, pos);
    }

    #[test]
    fn single_curve_scores_are_zero() {
        let g = unit_grid(10);
        let f = normalized(&g, |x| x);
        let two = Sample::new(vec![f.clone(), f.scaled(-1.0)]).unwrap();
        let es = Fpca::fit(&two, 1).unwrap().system;
        let one = Sample::new(vec![f]).unwrap();
        let sc = scores(&one, &es).unwrap();
        assert_eq!(sc.nrows(), 1);
        assert!(sc.values().amax() < 1e-15);
    }

    #[test]
    fn rank_bound_for_small_samples() {
        let g = unit_grid(30);
        let curves = (0..4)
            .map(|i| Curve::from_fn(g.clone(), |x| ((i + 1) as f64 * x).sin() + x * i as f64).unwrap())
            .collect();
        let s = Sample::new(curves).unwrap();
        let k = estimate_covariance(&s).unwrap();
        let es = eigendecompose(&k, 30).unwrap();
        // centred sample of 4 curves spans at most 3 dimensions
        assert!(es.count() <= 3);
        assert_relative_eq!(
            es.eigenvalues().iter().sum::<f64>(),
            k.trace_integral(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn json_round_trip_is_exact() {
        let g = unit_grid(12);
        let curves = (0..6)
            .map(|i| Curve::from_fn(g.clone(), |x| (x * (i + 1) as f64).cos() / 3.0).unwrap())
            .collect();
        let es = Fpca::fit(&Sample::new(curves).unwrap(), 3).unwrap().system;
        let text = serde_json::to_string(&es).unwrap();
        let back: EigenSystem = serde_json::from_str(&text).unwrap();
        assert_eq!(back.eigenvalues(), es.eigenvalues());
        assert_eq!(back.eigenfunctions(), es.eigenfunctions());
        assert_eq!(back.grid().weights(), es.grid().weights());
    }

    #[test]
    fn eigenfunctions_csv_layout() {
        let g = unit_grid(5);
        let s = Sample::new(vec![
            Curve::from_fn(g.clone(), |x| x).unwrap(),
            Curve::from_fn(g, |x| -x).unwrap(),
        ])
        .unwrap();
        let es = Fpca::fit(&s, 1).unwrap().system;
        let mut buf = Vec::new();
        write_eigenfunctions_csv(&mut buf, &es).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,psi_1\n0,"));
        assert_eq!(text.lines().count(), 6);
    }
}
