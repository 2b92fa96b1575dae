//! Synthetic Karhunen–Loève processes with known critical-point structure.
//!
//! A [`ProcessSpec`] lists orthonormal eigenfunctions, their eigenvalues and
//! the law of the standardised scores; curves are `Σ √θ_k η_k ψ_k`. Standard
//! scenarios reproduce the cubic family `c_λ(2λx³ − 3λx² + 1.5x)` completed by
//! orthonormalised sines, the sextic `(x − 0.8)³(x − 0.2)³`, the fifteen
//! component variant and the shoulder-plus-bump rotation.

mod poly;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrema::Interval;
use crate::func::{weighted_dot, Curve, Grid, Quadrature, Sample};
use crate::rng::Stream;

pub use poly::Poly;

pub const DEFAULT_GRID_POINTS: usize = 250;

/// 250 equally spaced points on `[0, 1]` with end-corrected trapezoid weights.
pub fn default_grid() -> Arc<Grid> {
    Arc::new(
        Grid::uniform_with(0.0, 1.0, DEFAULT_GRID_POINTS, Quadrature::EndCorrected)
            .expect("default grid is valid"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalKind {
    Max,
    Min,
    Shoulder,
}

/// A stationary point `u` with `ψ(x) − ψ(u) ≈ A (x − u)^r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruePoint {
    pub location: f64,
    pub kind: CriticalKind,
    pub order: usize,
    pub coefficient: f64,
}

impl TruePoint {
    pub fn new(location: f64, order: usize, coefficient: f64) -> Self {
        let kind = match (order % 2, coefficient < 0.0) {
            (1, _) => CriticalKind::Shoulder,
            (_, true) => CriticalKind::Max,
            (_, false) => CriticalKind::Min,
        };
        TruePoint {
            location,
            kind,
            order,
            coefficient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub critical_points: Vec<TruePoint>,
}

impl GroundTruth {
    fn from_poly(p: &Poly, a: f64, b: f64) -> Self {
        GroundTruth {
            critical_points: p
                .stationary_points(a, b)
                .into_iter()
                .map(|(u, r, c)| TruePoint::new(u, r, c))
                .collect(),
        }
    }

    pub fn validate(&self, a: f64, b: f64) -> Result<()> {
        for p in &self.critical_points {
            let bad = |why: &str| {
                Err(Error::InvalidArgument(format!(
                    "critical point at {}: {why}",
                    p.location
                )))
            };
            if !(a < p.location && p.location < b) {
                return bad("not interior");
            }
            if p.order < 2 {
                return bad("tangency order below 2");
            }
            let expected = TruePoint::new(p.location, p.order, p.coefficient).kind;
            if expected != p.kind {
                return bad("kind inconsistent with order and coefficient sign");
            }
        }
        Ok(())
    }

    pub fn points_in<'a>(&'a self, j: &'a Interval) -> impl Iterator<Item = &'a TruePoint> + 'a {
        self.critical_points.iter().filter(move |p| j.contains(p.location))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreLaw {
    #[default]
    Gaussian,
    /// `(|Z| − √(2/π)) / √(1 − 2/π)`: centred, unit variance, skewed.
    CenteredHalfNormal,
}

impl ScoreLaw {
    pub fn draw(self, rng: &mut Stream) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        match self {
            ScoreLaw::Gaussian => z,
            ScoreLaw::CenteredHalfNormal => {
                let mean = (2.0 / PI).sqrt();
                (z.abs() - mean) / (1.0 - 2.0 / PI).sqrt()
            }
        }
    }
}

impl std::str::FromStr for ScoreLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(ScoreLaw::Gaussian),
            "centered-half-normal" | "half-normal" => Ok(ScoreLaw::CenteredHalfNormal),
            _ => Err(Error::InvalidArgument(format!("unknown score law `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ProcessSpec {
    pub grid: Arc<Grid>,
    pub eigenfunctions: Vec<Curve>,
    pub eigenvalues: Vec<f64>,
    pub score_law: ScoreLaw,
    /// Known critical points per component, where available.
    pub truth: Vec<Option<GroundTruth>>,
    /// Closed-form polynomial per component, where available.
    pub analytic: Vec<Option<Poly>>,
    /// Constant added to every generated curve.
    pub mean_shift: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    grid: Grid,
    eigenvalues: Vec<f64>,
    eigenfunctions: Vec<Vec<f64>>,
    score_law: ScoreLaw,
    truth: Vec<Option<GroundTruth>>,
    #[serde(default)]
    analytic: Vec<Option<Poly>>,
    #[serde(default)]
    mean_shift: f64,
}

impl TryFrom<RawSpec> for ProcessSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let grid = Arc::new(raw.grid);
        let eigenfunctions = raw
            .eigenfunctions
            .into_iter()
            .map(|v| Curve::new(Arc::clone(&grid), v))
            .collect::<Result<Vec<_>>>()?;
        let k = eigenfunctions.len();
        let analytic = if raw.analytic.is_empty() { vec![None; k] } else { raw.analytic };
        let spec = ProcessSpec {
            grid,
            eigenfunctions,
            eigenvalues: raw.eigenvalues,
            score_law: raw.score_law,
            truth: raw.truth,
            analytic,
            mean_shift: raw.mean_shift,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ProcessSpec> for RawSpec {
    fn from(s: ProcessSpec) -> Self {
        RawSpec {
            grid: (*s.grid).clone(),
            eigenvalues: s.eigenvalues,
            eigenfunctions: s.eigenfunctions.into_iter().map(Curve::into_values).collect(),
            score_law: s.score_law,
            truth: s.truth,
            analytic: s.analytic,
            mean_shift: s.mean_shift,
        }
    }
}

/// Pairwise inner-product tolerance for spec bases.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

impl ProcessSpec {
    pub fn new(
        eigenfunctions: Vec<Curve>,
        eigenvalues: Vec<f64>,
        score_law: ScoreLaw,
        truth: Vec<Option<GroundTruth>>,
    ) -> Result<Self> {
        let grid = eigenfunctions
            .first()
            .map(|f| Arc::clone(f.grid()))
            .ok_or_else(|| Error::InvalidArgument("a process needs at least one component".into()))?;
        let k = eigenfunctions.len();
        let spec = ProcessSpec {
            grid,
            eigenfunctions,
            eigenvalues,
            score_law,
            truth,
            analytic: vec![None; k],
            mean_shift: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn components(&self) -> usize {
        self.eigenfunctions.len()
    }

    /// Truth of the 1-based component `k`, if known.
    pub fn truth_for(&self, k: usize) -> Option<&GroundTruth> {
        self.truth.get(k.checked_sub(1)?)?.as_ref()
    }

    pub fn with_mean_shift(mut self, shift: f64) -> Self {
        self.mean_shift = shift;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.eigenfunctions.len();
        if k == 0 {
            return Err(Error::InvalidArgument("a process needs at least one component".into()));
        }
        if self.eigenvalues.len() != k || self.truth.len() != k || self.analytic.len() != k {
            return Err(Error::InvalidArgument(format!(
                "{k} eigenfunctions but {} eigenvalues, {} truth entries and {} closed forms",
                self.eigenvalues.len(),
                self.truth.len(),
                self.analytic.len()
            )));
        }
        if self.eigenvalues.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidArgument("eigenvalues must be finite and nonnegative".into()));
        }
        if self.eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("eigenvalues must be nonincreasing".into()));
        }
        if !self.mean_shift.is_finite() {
            return Err(Error::InvalidArgument("mean shift must be finite".into()));
        }
        let w = self.grid.weights();
        for (i, f) in self.eigenfunctions.iter().enumerate() {
            if **f.grid() != *self.grid {
                return Err(Error::GridMismatch);
            }
            for (j, g) in self.eigenfunctions.iter().enumerate().take(i + 1) {
                let target = if i == j { 1.0 } else { 0.0 };
                let ip = weighted_dot(w, f.values(), g.values());
                if (ip - target).abs() > ORTHONORMAL_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "eigenfunctions {} and {} have inner product {ip}",
                        j + 1,
                        i + 1
                    )));
                }
            }
        }
        for t in self.truth.iter().flatten() {
            t.validate(self.grid.start(), self.grid.end())?;
        }
        Ok(())
    }
}

/// Raw cubic `2λx³ − 3λx² + 1.5x` written about 0.5.
fn psi1_raw(lambda: f64) -> Poly {
    // 2λ(t+½)³ − 3λ(t+½)² + 1.5(t+½) with t = x − ½
    Poly::new(0.5, vec![0.75 - 0.5 * lambda, 1.5 - 1.5 * lambda, 0.0, 2.0 * lambda])
}

/// Normalising constant making the cubic unit-norm on `[0, 1]`.
pub fn psi1_lambda_constant(lambda: f64) -> f64 {
    let sq = 13.0 * lambda * lambda / 35.0 - 21.0 * lambda / 20.0 + 0.75;
    1.0 / sq.sqrt()
}

/// Closed-form member of the cubic family, normalised on `[0, 1]`.
pub fn psi1_lambda_poly(lambda: f64) -> Poly {
    psi1_raw(lambda).scaled(psi1_lambda_constant(lambda))
}

/// The cubic sampled on `grid`, rescaled to unit quadrature norm.
pub fn psi1_lambda(lambda: f64, grid: &Arc<Grid>) -> Result<Curve> {
    if !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("λ = {lambda} is not finite")));
    }
    let raw = psi1_raw(lambda);
    let f = Curve::from_fn(Arc::clone(grid), |x| raw.eval(x))?;
    let norm = f.l2_norm();
    if norm == 0.0 {
        return Err(Error::InvalidCurve("the cubic vanishes on the grid".into()));
    }
    Ok(f.scaled(1.0 / norm))
}

/// Extrema and shoulders of the cubic family from the closed form.
pub fn psi1_lambda_truth(lambda: f64) -> Result<GroundTruth> {
    if !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("λ = {lambda} is not finite")));
    }
    let p = psi1_lambda_poly(lambda);
    let critical_points = if lambda < 1.0 {
        Vec::new()
    } else if lambda == 1.0 {
        vec![TruePoint::new(0.5, 3, p.coeffs[3])]
    } else {
        let root = (lambda * (lambda - 1.0)).sqrt();
        [lambda - root, lambda + root]
            .into_iter()
            .map(|v| v / (2.0 * lambda))
            .filter(|u| 0.0 < *u && *u < 1.0)
            .map(|u| TruePoint::new(u, 2, 0.5 * p.derivative_at(2, u)))
            .collect()
    };
    Ok(GroundTruth { critical_points })
}

/// Modified Gram–Schmidt (applied twice) of `candidates` against an already
/// orthonormal `basis`; candidate `i` becomes basis element `offset + i + 1`.
fn extend_orthonormal(mut basis: Vec<Curve>, candidates: Vec<Curve>) -> Result<Vec<Curve>> {
    for c in candidates {
        let grid = Arc::clone(c.grid());
        let w = grid.weights();
        let original = c.l2_norm();
        let mut v = c.into_values();
        for _ in 0..2 {
            for b in &basis {
                let ip = weighted_dot(w, &v, b.values());
                for (x, y) in v.iter_mut().zip(b.values()) {
                    *x -= ip * y;
                }
            }
        }
        let norm = weighted_dot(w, &v, &v).sqrt();
        if !(norm >= 1e-10 * original.max(f64::MIN_POSITIVE)) || norm < 1e-10 {
            return Err(Error::LinearDependence {
                index: basis.len() + 1,
                residual: norm,
            });
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(Curve::new(grid, v)?);
    }
    Ok(basis)
}

/// Orthonormalises `curves` in order under the grid's quadrature.
pub fn gram_schmidt(curves: &[Curve]) -> Result<Vec<Curve>> {
    extend_orthonormal(Vec::new(), curves.to_vec())
}

/// `first` followed by the orthonormalised `sin(2π(k−1)x)`, `k = 2..=count`.
/// `first` is kept bit-for-bit.
pub fn orthonormal_basis(first: &Curve, count: usize) -> Result<Vec<Curve>> {
    if count == 0 {
        return Err(Error::InvalidArgument("basis size must be at least 1".into()));
    }
    if (first.l2_norm() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidCurve(format!(
            "leading function has norm {}, expected 1",
            first.l2_norm()
        )));
    }
    let grid = first.grid();
    let sines = (2..=count)
        .map(|k| Curve::from_fn(Arc::clone(grid), |x| (2.0 * PI * (k - 1) as f64 * x).sin()))
        .collect::<Result<Vec<_>>>()?;
    extend_orthonormal(vec![first.clone()], sines)
}

/// `θ_k = k⁻²` for `k = 1..=count`.
pub fn inverse_square_eigenvalues(count: usize) -> Vec<f64> {
    (1..=count).map(|k| 1.0 / (k * k) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Scenario {
    /// Cubic family in the first of five components.
    Fig2 { lambda: f64 },
    /// Sextic with a minimum and two shoulders in the first of five components.
    Fig3,
    /// Cubic family in the fifth of fifteen components.
    Fig4 { lambda: f64 },
    /// Shoulder cubic rotated towards a quadratic bump by `δ = n^{−e}`.
    Fig5 { delta_exponent: f64, n: usize },
}

impl Scenario {
    /// Parses `fig2(λ)`, `fig3`, `fig4(λ)` or `fig5(e)`; `n` fixes δ for fig5.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let text = text.trim();
        let (name, arg) = match text.split_once('(') {
            Some((name, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::UnknownScenario(text.to_string()))?;
                let v: f64 = inner
                    .trim()
                    .parse()
                    .map_err(|_| Error::UnknownScenario(text.to_string()))?;
                (name.trim(), Some(v))
            }
            None => (text, None),
        };
        match (name, arg) {
            ("fig2", Some(lambda)) => Ok(Scenario::Fig2 { lambda }),
            ("fig3", None) => Ok(Scenario::Fig3),
            ("fig4", Some(lambda)) => Ok(Scenario::Fig4 { lambda }),
            ("fig5", Some(delta_exponent)) => Ok(Scenario::Fig5 { delta_exponent, n }),
            _ => Err(Error::UnknownScenario(text.to_string())),
        }
    }

    /// Component carrying the feature of interest (1-based).
    pub fn component(&self) -> usize {
        match self {
            Scenario::Fig4 { .. } => 5,
            _ => 1,
        }
    }

    /// Interval `J` around the feature of the scenario's component.
    pub fn default_interval(&self) -> Interval {
        let (lo, hi) = match *self {
            Scenario::Fig2 { lambda } if lambda > 1.0 => (0.6, 0.8),
            Scenario::Fig2 { .. } | Scenario::Fig3 => (0.4, 0.6),
            Scenario::Fig4 { lambda } if lambda > 1.0 => (0.65, 0.75),
            Scenario::Fig4 { .. } => (0.45, 0.55),
            Scenario::Fig5 { .. } => (0.25, 0.75),
        };
        Interval { lo, hi }
    }

    pub fn delta(&self) -> Option<f64> {
        match *self {
            Scenario::Fig5 { delta_exponent, n } => Some((n as f64).powf(-delta_exponent)),
            _ => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Fig2 { lambda } => write!(f, "fig2({lambda})"),
            Scenario::Fig3 => write!(f, "fig3"),
            Scenario::Fig4 { lambda } => write!(f, "fig4({lambda})"),
            Scenario::Fig5 { delta_exponent, .. } => write!(f, "fig5({delta_exponent})"),
        }
    }
}

/// Rotation of components `base` (j) and `bump` (p), both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub delta: f64,
    pub base: usize,
    pub bump: usize,
}

impl PerturbationSpec {
    /// `(φ_j, φ_p) = (√(1−δ²)ψ_j + δψ_p, δψ_j − √(1−δ²)ψ_p)`.
    pub fn rotate(&self, psi_j: &Curve, psi_p: &Curve) -> Result<(Curve, Curve)> {
        let c = self.cosine()?;
        Ok((psi_j.combine(c, psi_p, self.delta)?, psi_j.combine(self.delta, psi_p, -c)?))
    }

    fn cosine(&self) -> Result<f64> {
        if !(self.delta.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("δ = {} must lie in (−1, 1)", self.delta)));
        }
        Ok((1.0 - self.delta * self.delta).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardSpec {
    pub scenario: Scenario,
    pub process: ProcessSpec,
    pub perturbation: Option<PerturbationSpec>,
}

/// Five-component process led by `first`, whose closed form is `poly`.
fn led_by(first: Curve, poly: Poly, truth: GroundTruth, count: usize, law: ScoreLaw) -> Result<ProcessSpec> {
    let basis = orthonormal_basis(&first, count)?;
    let mut truths = vec![None; count];
    truths[0] = Some(truth);
    let mut spec = ProcessSpec::new(basis, inverse_square_eigenvalues(count), law, truths)?;
    spec.analytic[0] = Some(poly);
    Ok(spec)
}

pub fn standard_spec(scenario: &Scenario, law: ScoreLaw) -> Result<StandardSpec> {
    let grid = default_grid();
    let (process, perturbation) = match *scenario {
        Scenario::Fig2 { lambda } => {
            let spec = led_by(
                psi1_lambda(lambda, &grid)?,
                psi1_lambda_poly(lambda),
                psi1_lambda_truth(lambda)?,
                5,
                law,
            )?;
            (spec, None)
        }
        Scenario::Fig3 => {
            let base = Poly::from_roots(0.5, &[0.2, 0.8]);
            let raw = base.mul(&base).mul(&base);
            let poly = raw.scaled(1.0 / raw.norm_squared(0.0, 1.0).sqrt());
            let f = Curve::from_fn(Arc::clone(&grid), |x| raw.eval(x))?;
            let f = f.scaled(1.0 / f.l2_norm());
            let truth = GroundTruth::from_poly(&poly, 0.0, 1.0);
            (led_by(f, poly, truth, 5, law)?, None)
        }
        Scenario::Fig4 { lambda } => {
            let lead = led_by(
                psi1_lambda(lambda, &grid)?,
                psi1_lambda_poly(lambda),
                psi1_lambda_truth(lambda)?,
                15,
                law,
            )?;
            // move the cubic from the first slot to the fifth, keeping θ_k = k⁻²
            let mut order: Vec<usize> = (1..15).collect();
            order.insert(4, 0);
            let pick = |v: &[Option<GroundTruth>], i: usize| v[i].clone();
            let spec = ProcessSpec {
                eigenfunctions: order.iter().map(|&i| lead.eigenfunctions[i].clone()).collect(),
                truth: order.iter().map(|&i| pick(&lead.truth, i)).collect(),
                analytic: order.iter().map(|&i| lead.analytic[i].clone()).collect(),
                ..lead
            };
            spec.validate()?;
            (spec, None)
        }
        Scenario::Fig5 { delta_exponent, n } => {
            if n == 0 || !delta_exponent.is_finite() || delta_exponent <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "fig5 needs n ≥ 1 and a positive exponent, got n = {n}, e = {delta_exponent}"
                )));
            }
            let psi_j = Poly::new(0.5, vec![0.0, 0.0, 0.0, 8.0 * 7f64.sqrt()]);
            let psi_p = Poly::new(0.5, vec![0.0, 0.0, -4.0 * 5f64.sqrt()]);
            let fj = Curve::from_fn(Arc::clone(&grid), |x| psi_j.eval(x))?;
            let fj = fj.scaled(1.0 / fj.l2_norm());
            let fp = Curve::from_fn(Arc::clone(&grid), |x| psi_p.eval(x))?;
            let sines = (3..=5)
                .map(|k| Curve::from_fn(Arc::clone(&grid), |x| (2.0 * PI * (k - 1) as f64 * x).sin()))
                .collect::<Result<Vec<_>>>()?;
            let mut candidates = vec![fp];
            candidates.extend(sines);
            let basis = extend_orthonormal(vec![fj], candidates)?;
            let mut truth = vec![None; 5];
            truth[0] = Some(GroundTruth::from_poly(&psi_j, 0.0, 1.0));
            truth[1] = Some(GroundTruth::from_poly(&psi_p, 0.0, 1.0));
            let mut base = ProcessSpec::new(basis, inverse_square_eigenvalues(5), law, truth)?;
            base.analytic[0] = Some(psi_j);
            base.analytic[1] = Some(psi_p);
            let pert = PerturbationSpec {
                delta: scenario.delta().expect("fig5 has a δ"),
                base: 1,
                bump: 2,
            };
            (perturbed_process(&base, &pert)?, Some(pert))
        }
    };
    Ok(StandardSpec {
        scenario: *scenario,
        process,
        perturbation,
    })
}

/// Replaces components `j`, `p` by the rotated pair; eigenvalues untouched.
pub fn perturbed_process(base: &ProcessSpec, pert: &PerturbationSpec) -> Result<ProcessSpec> {
    let k = base.components();
    let (j, p) = (pert.base, pert.bump);
    if j == p || j == 0 || p == 0 || j > k || p > k {
        return Err(Error::InvalidArgument(format!(
            "perturbation indices j = {j}, p = {p} invalid for {k} components"
        )));
    }
    let c = pert.cosine()?;
    let (phi_j, phi_p) = pert.rotate(&base.eigenfunctions[j - 1], &base.eigenfunctions[p - 1])?;
    let mut out = base.clone();
    out.eigenfunctions[j - 1] = phi_j;
    out.eigenfunctions[p - 1] = phi_p;
    let (a, b) = (base.grid.start(), base.grid.end());
    match (&base.analytic[j - 1], &base.analytic[p - 1]) {
        (Some(pj), Some(pp)) if pj.center == pp.center => {
            let aj = pj.combine(c, pp, pert.delta);
            let ap = pj.combine(pert.delta, pp, -c);
            out.truth[j - 1] = Some(GroundTruth::from_poly(&aj, a, b));
            out.truth[p - 1] = Some(GroundTruth::from_poly(&ap, a, b));
            out.analytic[j - 1] = Some(aj);
            out.analytic[p - 1] = Some(ap);
        }
        _ => {
            out.truth[j - 1] = None;
            out.truth[p - 1] = None;
            out.analytic[j - 1] = None;
            out.analytic[p - 1] = None;
        }
    }
    out.validate()?;
    Ok(out)
}

/// `n` curves `μ + Σ_k √θ_k η_k ψ_k`; scores drawn curve by curve, component
/// by component, from `rng`.
pub fn generate_sample(spec: &ProcessSpec, n: usize, rng: &mut Stream) -> Result<Sample> {
    if n == 0 {
        return Err(Error::TooFewCurves { required: 1, actual: 0 });
    }
    let p = spec.grid.len();
    let roots: Vec<f64> = spec.eigenvalues.iter().map(|t| t.sqrt()).collect();
    let curves = (0..n)
        .map(|_| {
            let mut values = vec![spec.mean_shift; p];
            for (psi, r) in spec.eigenfunctions.iter().zip(&roots) {
                let xi = r * spec.score_law.draw(rng);
                for (v, f) in values.iter_mut().zip(psi.values()) {
                    *v += xi * f;
                }
            }
            Curve::new(Arc::clone(&spec.grid), values)
        })
        .collect::<Result<Vec<_>>>()?;
    Sample::new(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extrema::{find_extrema, ExtremumKind};
    use crate::fpca::{covariance_from_components, eigendecompose};
    use crate::rng::SeedTree;
    use approx::assert_relative_eq;

    fn assert_orthonormal(fs: &[Curve], tol: f64) {
        for (i, f) in fs.iter().enumerate() {
            for (j, g) in fs.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                let ip = f.inner_product(g).unwrap();
                assert!((ip - want).abs() <= tol, "<ψ{}, ψ{}> = {ip}", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn cubic_family_normalisation() {
        let g = default_grid();
        assert_relative_eq!(psi1_lambda_constant(0.0), 2.0 / 3f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(psi1_lambda_constant(1.0), 14f64.sqrt(), epsilon = 1e-13);
        let f0 = psi1_lambda(0.0, &g).unwrap();
        assert_relative_eq!(f0.values()[249], 1.1547005383792517 * 1.5, epsilon = 1e-6);
        for lambda in [-2.0, 0.0, 0.85, 1.0, 1.2, 3.0] {
            let f = psi1_lambda(lambda, &g).unwrap();
            assert_relative_eq!(f.l2_norm(), 1.0, epsilon = 1e-12);
            // grid normalisation agrees with the closed form
            let exact = psi1_lambda_poly(lambda);
            for (x, v) in g.points().iter().zip(f.values()) {
                assert!((exact.eval(*x) - v).abs() < 1e-6);
            }
            assert_relative_eq!(exact.norm_squared(0.0, 1.0), 1.0, epsilon = 1e-12);
        }
        assert_eq!(psi1_lambda(1.0, &g).unwrap().values()[0], 0.0);
        assert!(psi1_lambda(f64::NAN, &g).is_err());
    }

    #[test]
    fn cubic_family_truth() {
        assert!(psi1_lambda_truth(0.85).unwrap().critical_points.is_empty());
        let t1 = psi1_lambda_truth(1.0).unwrap();
        assert_eq!(t1.critical_points.len(), 1);
        assert_eq!(t1.critical_points[0].location, 0.5);
        assert_eq!(t1.critical_points[0].kind, CriticalKind::Shoulder);
        assert_eq!(t1.critical_points[0].order, 3);
        let t = psi1_lambda_truth(1.2).unwrap();
        let locs: Vec<f64> = t.critical_points.iter().map(|p| p.location).collect();
        assert_relative_eq!(locs[0], 0.295876, epsilon = 1e-6);
        assert_relative_eq!(locs[1], 0.704124, epsilon = 1e-6);
        assert_eq!(t.critical_points[0].kind, CriticalKind::Max);
        assert_eq!(t.critical_points[1].kind, CriticalKind::Min);
        // the generic polynomial search agrees with the closed form
        let generic = GroundTruth::from_poly(&psi1_lambda_poly(1.2), 0.0, 1.0);
        for (a, b) in generic.critical_points.iter().zip(&t.critical_points) {
            assert_relative_eq!(a.location, b.location, epsilon = 1e-12);
            assert_relative_eq!(a.coefficient, b.coefficient, epsilon = 1e-9);
            assert_eq!(a.kind, b.kind);
        }
        t.validate(0.0, 1.0).unwrap();
    }

    #[test]
    fn detector_matches_truth_on_the_cubic_family() {
        let g = default_grid();
        let h = g.spacing().unwrap();
        for lambda in [0.5, 0.85, 1.0] {
            assert!(find_extrema(&psi1_lambda(lambda, &g).unwrap(), 0.0).unwrap().is_empty());
        }
        for lambda in [1.2, 1.5, 2.0] {
            let found = find_extrema(&psi1_lambda(lambda, &g).unwrap(), 0.0).unwrap();
            let truth = psi1_lambda_truth(lambda).unwrap();
            assert_eq!(found.len(), 2);
            for (f, t) in found.iter().zip(&truth.critical_points) {
                assert!((f.location - t.location).abs() <= h);
            }
            assert_eq!(found[0].kind, ExtremumKind::LocalMax);
        }
    }

    #[test]
    fn bases() {
        let g = default_grid();
        let first = psi1_lambda(1.0, &g).unwrap();
        assert_eq!(orthonormal_basis(&first, 1).unwrap(), vec![first.clone()]);
        let two = orthonormal_basis(&first, 2).unwrap();
        assert_orthonormal(&two, 1e-8);
        let fifteen = orthonormal_basis(&first, 15).unwrap();
        assert_eq!(fifteen.len(), 15);
        assert_orthonormal(&fifteen, 1e-8);
        assert_eq!(fifteen[0], first);
        assert!(orthonormal_basis(&first.scaled(2.0), 3).is_err());
        assert!(orthonormal_basis(&first, 0).is_err());
    }

    #[test]
    fn dependent_candidates_are_rejected() {
        let g = default_grid();
        let f = Curve::from_fn(Arc::clone(&g), |x| x).unwrap();
        let e = Curve::from_fn(Arc::clone(&g), |x| x * x).unwrap();
        match gram_schmidt(&[f.clone(), e, f.scaled(3.0)]) {
            Err(Error::LinearDependence { index, .. }) => assert_eq!(index, 3),
            other => panic!("expected linear dependence, got {other:?}"),
        }
    }

    #[test]
    fn standard_scenarios() {
        let s = standard_spec(&Scenario::Fig2 { lambda: 1.2 }, ScoreLaw::Gaussian).unwrap();
        assert_eq!(s.process.eigenvalues, vec![1.0, 0.25, 1.0 / 9.0, 0.0625, 0.04]);
        assert_eq!(s.process.truth_for(1), Some(&psi1_lambda_truth(1.2).unwrap()));
        assert!(s.perturbation.is_none());

        let f3 = standard_spec(&Scenario::Fig3, ScoreLaw::Gaussian).unwrap();
        let kinds: Vec<_> = f3.process.truth_for(1).unwrap().critical_points.iter().map(|p| (p.kind, p.order)).collect();
        assert_eq!(
            kinds,
            vec![(CriticalKind::Shoulder, 3), (CriticalKind::Min, 2), (CriticalKind::Shoulder, 3)]
        );
        let locs: Vec<f64> = f3.process.truth_for(1).unwrap().critical_points.iter().map(|p| p.location).collect();
        for (a, b) in locs.iter().zip([0.2, 0.5, 0.8]) {
            assert_relative_eq!(*a, b, epsilon = 1e-9);
        }
        assert_relative_eq!(f3.process.eigenfunctions[0].l2_norm(), 1.0, epsilon = 1e-12);

        let f4 = standard_spec(&Scenario::Fig4 { lambda: 1.2 }, ScoreLaw::Gaussian).unwrap();
        assert_eq!(f4.process.components(), 15);
        assert_eq!(f4.process.eigenvalues[14], 1.0 / 225.0);
        assert_eq!(f4.process.eigenfunctions[4], psi1_lambda(1.2, &default_grid()).unwrap());
        assert!(f4.process.truth_for(1).is_none());
        assert_eq!(f4.process.truth_for(5).unwrap().critical_points.len(), 2);

        let f5 = standard_spec(&Scenario::Fig5 { delta_exponent: 0.25, n: 300 }, ScoreLaw::Gaussian).unwrap();
        let pert = f5.perturbation.unwrap();
        assert_relative_eq!(pert.delta, 0.2403, epsilon = 1e-4);
        let t = f5.process.truth_for(1).unwrap();
        assert_eq!(t.critical_points.len(), 2);
        assert!(t.critical_points.iter().any(|p| p.location == 0.5 && p.kind == CriticalKind::Max));
        let d = pert.delta;
        let expected = 0.5 + 5f64.sqrt() * d / (3.0 * 7f64.sqrt() * (1.0 - d * d).sqrt());
        assert_relative_eq!(t.critical_points[1].location, expected, epsilon = 1e-10);
        assert_eq!(t.critical_points[1].kind, CriticalKind::Min);

        let tenth = Scenario::parse("fig5(0.1)", 300).unwrap();
        assert_relative_eq!(tenth.delta().unwrap(), 0.5654, epsilon = 1e-4);
        assert!(matches!(Scenario::parse("fig9(1)", 10), Err(Error::UnknownScenario(_))));
        assert!(Scenario::parse("fig2", 10).is_err());
        assert_eq!(Scenario::parse(" fig2(1.2) ", 10).unwrap(), Scenario::Fig2 { lambda: 1.2 });
        assert_eq!(Scenario::Fig4 { lambda: 1.0 }.to_string(), "fig4(1)");
        for sc in [
            Scenario::Fig2 { lambda: 0.85 },
            Scenario::Fig2 { lambda: 1.0 },
            Scenario::Fig3,
            Scenario::Fig4 { lambda: 1.0 },
            Scenario::Fig5 { delta_exponent: 0.8, n: 300 },
        ] {
            let spec = standard_spec(&sc, ScoreLaw::CenteredHalfNormal).unwrap();
            assert_orthonormal(&spec.process.eigenfunctions, 1e-8);
        }
    }

    #[test]
    fn rotation_pair() {
        let f5 = Poly::new(0.5, vec![0.0, 0.0, 0.0, 8.0 * 7f64.sqrt()]);
        let f6 = Poly::new(0.5, vec![0.0, 0.0, -4.0 * 5f64.sqrt()]);
        assert_relative_eq!(f5.norm_squared(0.0, 1.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(f6.norm_squared(0.0, 1.0), 1.0, epsilon = 1e-12);
        assert!(f5.mul(&f6).integrate(0.0, 1.0).abs() < 1e-12);

        let base = standard_spec(&Scenario::Fig2 { lambda: 1.0 }, ScoreLaw::Gaussian).unwrap().process;
        let zero = perturbed_process(&base, &PerturbationSpec { delta: 0.0, base: 1, bump: 2 }).unwrap();
        assert_eq!(zero.eigenfunctions[0], base.eigenfunctions[0]);
        assert_eq!(zero.eigenfunctions[1], base.eigenfunctions[1].scaled(-1.0));
        assert_eq!(zero.eigenvalues, base.eigenvalues);
        for delta in [0.1, 0.5, 0.9, -0.3] {
            let pert = PerturbationSpec { delta, base: 1, bump: 2 };
            let out = perturbed_process(&base, &pert).unwrap();
            assert_eq!(out.eigenvalues, base.eigenvalues);
            let (a, b) = (&out.eigenfunctions[0], &out.eigenfunctions[1]);
            assert!((a.l2_norm() - 1.0).abs() < 1e-10);
            assert!((b.l2_norm() - 1.0).abs() < 1e-10);
            assert!(a.inner_product(b).unwrap().abs() < 1e-10);
        }
        for bad in [1.0, -1.0, 1.5] {
            assert!(perturbed_process(&base, &PerturbationSpec { delta: bad, base: 1, bump: 2 }).is_err());
        }
        assert!(perturbed_process(&base, &PerturbationSpec { delta: 0.1, base: 2, bump: 2 }).is_err());
        assert!(perturbed_process(&base, &PerturbationSpec { delta: 0.1, base: 1, bump: 9 }).is_err());
    }

    #[test]
    fn exact_covariance_recovers_the_spec() {
        for sc in [Scenario::Fig2 { lambda: 1.2 }, Scenario::Fig3, Scenario::Fig4 { lambda: 1.0 }] {
            let spec = standard_spec(&sc, ScoreLaw::Gaussian).unwrap().process;
            let cov = covariance_from_components(&spec.eigenvalues, &spec.eigenfunctions, &spec.grid).unwrap();
            let k = spec.components();
            let mut es = eigendecompose(&cov, k).unwrap();
            es.align_to(&spec.eigenfunctions).unwrap();
            for (i, (got, want)) in es.eigenvalues().iter().zip(&spec.eigenvalues).enumerate() {
                assert!((got - want).abs() <= 1e-6 * want, "θ{} = {got}", i + 1);
            }
            for (got, want) in es.eigenfunctions().iter().zip(&spec.eigenfunctions) {
                assert!(got.sub(want).unwrap().l2_norm() < 1e-3);
            }
        }
    }

    #[test]
    fn sampling() {
        let spec = standard_spec(&Scenario::Fig2 { lambda: 1.0 }, ScoreLaw::Gaussian).unwrap().process;
        let mut rng = SeedTree::new(5).stream(0);
        let s = generate_sample(&spec, 5000, &mut rng).unwrap();
        assert_eq!(s.n(), 5000);
        // project on the basis: score variances near k⁻²
        for (k, psi) in spec.eigenfunctions.iter().enumerate() {
            let xs: Vec<f64> = s.curves().iter().map(|c| c.inner_product(psi).unwrap()).collect();
            let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
            let theta = spec.eigenvalues[k];
            let se = theta * (2.0 / 5000f64).sqrt();
            assert!((var - theta).abs() < 3.0 * se, "component {}: {var} vs {theta}", k + 1);
        }
        // curves lie in the span of the eigenfunctions
        for c in s.curves().iter().take(50) {
            let mut r = c.clone();
            for psi in &spec.eigenfunctions {
                r = r.combine(1.0, psi, -c.inner_product(psi).unwrap()).unwrap();
            }
            assert!(r.l2_norm() < 1e-8);
        }
        assert!(generate_sample(&spec, 0, &mut rng).is_err());
    }

    #[test]
    fn rank_one_and_shift() {
        let mut spec = standard_spec(&Scenario::Fig2 { lambda: 1.2 }, ScoreLaw::Gaussian).unwrap().process;
        spec.eigenvalues = vec![1.0, 0.0, 0.0, 0.0, 0.0];
        let s = generate_sample(&spec, 10, &mut SeedTree::new(1).stream(0)).unwrap();
        let psi = &spec.eigenfunctions[0];
        for c in s.curves() {
            let xi = c.inner_product(psi).unwrap();
            assert!(c.sub(&psi.scaled(xi)).unwrap().max_abs() < 1e-12);
        }
        let shifted = spec.clone().with_mean_shift(3.0);
        let a = generate_sample(&spec, 4, &mut SeedTree::new(2).stream(0)).unwrap();
        let b = generate_sample(&shifted, 4, &mut SeedTree::new(2).stream(0)).unwrap();
        for (x, y) in a.curves().iter().zip(b.curves()) {
            assert!(y.sub(x).unwrap().values().iter().all(|d| (d - 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn half_normal_scores_are_standardised() {
        let mut rng = SeedTree::new(11).stream(0);
        let n = 5000;
        let xs: Vec<f64> = (0..n).map(|_| ScoreLaw::CenteredHalfNormal.draw(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (1.0 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean}");
        // SE of a sample variance: √((μ₄ − σ⁴)/n), μ₄ estimated from the draws
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
        let se_var = ((m4 - var * var) / n as f64).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se_var, "variance {var}");
        assert!(xs.iter().all(|x| *x >= -(2.0 / PI).sqrt() / (1.0 - 2.0 / PI).sqrt() - 1e-12));
    }

    #[test]
    fn spec_json_round_trip_is_exact() {
        let spec = standard_spec(&Scenario::Fig5 { delta_exponent: 0.25, n: 300 }, ScoreLaw::Gaussian).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: StandardSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
