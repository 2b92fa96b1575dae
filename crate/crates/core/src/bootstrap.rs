//! m-out-of-n bootstrap assessment of extrema in a principal component
//! function.
//!
//! Each replicate resamples `m` curves with replacement, recomputes the
//! covariance of the resample (centred at the resample's own mean), takes its
//! `k`-th eigenfunction, aligns its sign with the full-sample eigenfunction
//! and counts the extrema falling in the target interval `J`.
//!
//! Two algebraically equivalent routes are available. [`BootstrapRoute::Direct`]
//! rebuilds the gridded covariance and solves the full weighted eigenproblem.
//! [`BootstrapRoute::ScoreSpace`] uses the fact that every centred resample
//! curve lies in the span of the full-sample eigenfunctions: with `S` the
//! full-sample score matrix, the resample covariance is `Σ C_jl ψ_j ⊗ ψ_l`
//! with `C = S̃*ᵀ S̃* / m`, so only an `r × r` problem is solved, `r` being the
//! number of retained full-sample components.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrema::{find_extrema, CriticalPoint, Interval};
use crate::fpca::{
    align_sign, descending_order, eigendecompose_with, estimate_covariance, scores,
    symmetric_eigen, EigenOptions, EigenSystem,
};
use crate::func::{same_grid, Curve, Grid, Sample};
use crate::rng::{SeedTree, Stream};

/// Number of ν buckets kept: 0, 1, 2, 3, 4 and "more than 4".
pub const NU_BUCKETS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapRoute {
    #[default]
    ScoreSpace,
    Direct,
}

impl std::str::FromStr for BootstrapRoute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score-space" => Ok(BootstrapRoute::ScoreSpace),
            "direct" => Ok(BootstrapRoute::Direct),
            _ => Err(Error::InvalidArgument(format!("unknown bootstrap route `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// 1-based component index.
    pub component: usize,
    pub resample_size: usize,
    pub iterations: usize,
    pub interval: Interval,
    pub margin: f64,
    pub seed: u64,
    #[serde(default)]
    pub route: BootstrapRoute,
}

impl BootstrapConfig {
    fn validate(&self, n: usize, retained: usize) -> Result<()> {
        if self.resample_size < 2 || self.resample_size > n {
            return Err(Error::InvalidArgument(format!(
                "resample size m = {} must lie in 2..={n}",
                self.resample_size
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("bootstrap iterations must be at least 1".into()));
        }
        if self.component == 0 || self.component > retained {
            return Err(Error::ComponentOutOfRange {
                requested: self.component,
                available: retained,
            });
        }
        if !(self.margin >= 0.0) {
            return Err(Error::InvalidArgument(format!("margin {} is negative", self.margin)));
        }
        Ok(())
    }
}

/// Proportions of replicates with ν = 0, 1, 2, 3, 4 and > 4 extrema in `J`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NuProportions(pub [f64; NU_BUCKETS]);

impl NuProportions {
    pub fn bucket(nu: usize) -> usize {
        nu.min(NU_BUCKETS - 1)
    }

    pub fn get(&self, nu: usize) -> f64 {
        self.0[Self::bucket(nu)]
    }

    fn label(i: usize) -> String {
        if i == NU_BUCKETS - 1 {
            format!(">{}", NU_BUCKETS - 2)
        } else {
            i.to_string()
        }
    }
}

impl Serialize for NuProportions {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(NU_BUCKETS))?;
        for (i, p) in self.0.iter().enumerate() {
            map.serialize_entry(&Self::label(i), p)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for NuProportions {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let map = std::collections::BTreeMap::<String, f64>::deserialize(deserializer)?;
        let mut out = [0.0; NU_BUCKETS];
        for (k, v) in map {
            let i = (0..NU_BUCKETS)
                .find(|&i| Self::label(i) == k)
                .ok_or_else(|| D::Error::custom(format!("unknown bucket `{k}`")))?;
            out[i] = v;
        }
        Ok(NuProportions(out))
    }
}

/// Extrema of one replicate's eigenfunction that fall in `J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub nu: usize,
    pub extrema: Vec<CriticalPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapAssessment {
    pub k: usize,
    pub m: usize,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "J")]
    pub interval: Interval,
    pub epsilon: f64,
    pub seed: u64,
    pub nu_proportions: NuProportions,
    pub p_hat: f64,
    pub pi_hat: f64,
    pub degenerate_count: usize,
    /// `None` marks a degenerate replicate.
    #[serde(skip)]
    pub per_replicate: Vec<Option<ReplicateOutcome>>,
}

/// Draws `m` curves uniformly with replacement.
pub fn resample(s: &Sample, m: usize, rng: &mut Stream) -> Result<Sample> {
    if m == 0 || m > s.n() {
        return Err(Error::InvalidArgument(format!(
            "resample size {m} must lie in 1..={}",
            s.n()
        )));
    }
    Ok(s.select(&draw_indices(s.n(), m, rng)))
}

fn draw_indices(n: usize, m: usize, rng: &mut Stream) -> Vec<usize> {
    (0..m).map(|_| rng.random_range(0..n)).collect()
}

/// `max{0, 2(p̂ − ½)}`.
pub fn bootstrap_likelihood(p_hat: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::InvalidArgument(format!("p_hat {p_hat} outside [0, 1]")));
    }
    Ok((2.0 * (p_hat - 0.5)).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MSchedule {
    /// `⌊2 n^0.6⌋`, clamped to `[2, n]`.
    Default,
    /// Ladder from `n` down to `max(10, n/4)` in seven steps.
    Exploratory,
    List(Vec<usize>),
}

/// `⌊2 n^0.6⌋`, clamped to `[2, n]`.
pub fn default_m(n: usize) -> usize {
    ((2.0 * (n as f64).powf(0.6)).floor() as usize).clamp(2, n.max(2))
}

pub fn m_schedule(n: usize, mode: &MSchedule) -> Result<Vec<usize>> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!("m schedule needs n >= 4, got {n}")));
    }
    match mode {
        MSchedule::Default => Ok(vec![default_m(n)]),
        MSchedule::Exploratory => Ok(exploratory_ladder(n)),
        MSchedule::List(ms) => {
            if ms.is_empty() {
                return Err(Error::InvalidArgument("empty m list".into()));
            }
            if let Some(m) = ms.iter().find(|&&m| m < 2 || m > n) {
                return Err(Error::InvalidArgument(format!("m = {m} outside 2..={n}")));
            }
            Ok(ms.clone())
        }
    }
}

fn exploratory_ladder(n: usize) -> Vec<usize> {
    const STEPS: usize = 6;
    let lo = (n / 4).max(10).min(n);
    let step = (n - lo) as f64 / STEPS as f64;
    // round rungs to multiples of 5 once the ladder spans 20 or more
    let quantum = if n - lo >= 20 { 5.0 } else { 1.0 };
    let mut ladder = vec![n];
    for i in 1..STEPS {
        let raw = n as f64 - step * i as f64;
        let m = ((raw / quantum).round() * quantum) as usize;
        let m = m.clamp(lo, n);
        if ladder.last().is_some_and(|&last| m < last) {
            ladder.push(m);
        }
    }
    if ladder.last().is_some_and(|&last| lo < last) {
        ladder.push(lo);
    }
    ladder
}

/// Basis in which the bootstrap eigenproblems are solved.
enum RouteKind {
    ScoreSpace {
        basis: Vec<Curve>,
        scores: DMatrix<f64>,
    },
    Direct,
}

struct RouteContext {
    kind: RouteKind,
    /// Eigenvalues at or below this level are rounding noise: centring `n`
    /// copies of a curve leaves residues of order `ε·|X|`.
    noise: f64,
}

fn noise_floor(s: &Sample) -> f64 {
    let mean_square = s.curves().iter().map(|c| c.l2_norm().powi(2)).sum::<f64>() / s.n() as f64;
    1e3 * f64::EPSILON * f64::EPSILON * mean_square
}

impl RouteContext {
    fn build(s: &Sample, route: BootstrapRoute) -> Result<Self> {
        let noise = noise_floor(s);
        let kind = match route {
            BootstrapRoute::Direct => RouteKind::Direct,
            BootstrapRoute::ScoreSpace => {
                let cov = estimate_covariance(s)?;
                let full = eigendecompose_with(&cov, s.grid().len(), &quiet_options())?;
                let count = full
                    .eigenvalues()
                    .iter()
                    .take_while(|t| **t > noise)
                    .count();
                let sc = scores(s, &full)?;
                RouteKind::ScoreSpace {
                    basis: full.eigenfunctions()[..count].to_vec(),
                    scores: sc.values().columns(0, count).into_owned(),
                }
            }
        };
        Ok(RouteContext { kind, noise })
    }

    /// k-th eigenfunction of the resample covariance, or `None` when the
    /// resample carries no identifiable k-th component.
    fn eigenfunction(&self, s: &Sample, grid: &Arc<Grid>, idx: &[usize], k: usize) -> Result<Option<Curve>> {
        let floor = EigenOptions::default().retention_floor;
        match &self.kind {
            RouteKind::Direct => {
                let cov = estimate_covariance(&s.select(idx))?;
                let es = eigendecompose_with(&cov, k, &quiet_options())?;
                let top = es.eigenvalues()[0];
                if es.count() < k || top <= self.noise || es.eigenvalues()[k - 1] <= floor * top {
                    return Ok(None);
                }
                Ok(Some(es.eigenfunctions()[k - 1].clone()))
            }
            RouteKind::ScoreSpace { basis, scores } => {
                let r = basis.len();
                if r < k {
                    return Ok(None);
                }
                let m = idx.len();
                let mut centered = DMatrix::from_fn(m, r, |i, j| scores[(idx[i], j)]);
                for j in 0..r {
                    let mean = centered.column(j).mean();
                    centered.column_mut(j).add_scalar_mut(-mean);
                }
                let mut c = centered.tr_mul(&centered);
                c /= m as f64;
                let (values, vectors) = symmetric_eigen(c)?;
                let order = descending_order(&values);
                let top = values[order[0]];
                let theta_k = values[order[k - 1]];
                if top <= self.noise || theta_k <= floor * top {
                    return Ok(None);
                }
                let v = vectors.column(order[k - 1]);
                let mut out = vec![0.0; grid.len()];
                for (coef, psi) in v.iter().zip(basis) {
                    for (o, p) in out.iter_mut().zip(psi.values()) {
                        *o += coef * p;
                    }
                }
                Ok(Some(Curve::from_parts_unchecked(Arc::clone(grid), out)))
            }
        }
    }
}

fn quiet_options() -> EigenOptions {
    EigenOptions {
        tie_tolerance: 0.0,
        ..EigenOptions::default()
    }
}

pub fn run_bootstrap(
    s: &Sample,
    reference: &EigenSystem,
    cfg: &BootstrapConfig,
) -> Result<BootstrapAssessment> {
    if !same_grid(s.grid(), reference.grid()) {
        return Err(Error::GridMismatch);
    }
    cfg.validate(s.n(), reference.count())?;
    let reference_k = reference.component(cfg.component)?;
    let context = RouteContext::build(s, cfg.route)?;
    let tree = SeedTree::new(cfg.seed);
    let grid = s.grid();

    let per_replicate: Vec<Option<ReplicateOutcome>> = (0..cfg.iterations)
        .into_par_iter()
        .map(|b| -> Result<Option<ReplicateOutcome>> {
            let mut rng = tree.stream(b as u64);
            let idx = draw_indices(s.n(), cfg.resample_size, &mut rng);
            if idx.iter().collect::<BTreeSet<_>>().len() < 2 {
                return Ok(None);
            }
            let Some(psi) = context.eigenfunction(s, grid, &idx, cfg.component)? else {
                return Ok(None);
            };
            let psi = align_sign(&psi, reference_k)?;
            let extrema: Vec<CriticalPoint> = find_extrema(&psi, cfg.margin)?
                .into_iter()
                .filter(|p| cfg.interval.contains(p.location))
                .collect();
            Ok(Some(ReplicateOutcome {
                nu: extrema.len(),
                extrema,
            }))
        })
        .collect::<Result<_>>()?;

    summarize(cfg, per_replicate)
}

fn summarize(cfg: &BootstrapConfig, per_replicate: Vec<Option<ReplicateOutcome>>) -> Result<BootstrapAssessment> {
    let mut counts = [0usize; NU_BUCKETS];
    let mut valid = 0usize;
    for outcome in per_replicate.iter().flatten() {
        counts[NuProportions::bucket(outcome.nu)] += 1;
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::AllDegenerate(per_replicate.len()));
    }
    let mut props = [0.0; NU_BUCKETS];
    for (p, c) in props.iter_mut().zip(counts) {
        *p = c as f64 / valid as f64;
    }
    let p_hat = (valid - counts[0]) as f64 / valid as f64;
    Ok(BootstrapAssessment {
        k: cfg.component,
        m: cfg.resample_size,
        b: cfg.iterations,
        interval: cfg.interval,
        epsilon: cfg.margin,
        seed: cfg.seed,
        nu_proportions: NuProportions(props),
        p_hat,
        pi_hat: bootstrap_likelihood(p_hat)?,
        degenerate_count: per_replicate.len() - valid,
        per_replicate,
    })
}
