//! Desk-scale checks of the asymptotic statements: extremum counts near
//! true critical points, the location rate, and the behaviour of `p̂⁽⁰⁾`
//! as `m/n` varies.

use serde::{Deserialize, Serialize};

use super::{run_experiment, BootstrapTemplate, ExperimentConfig, MRule, Moments};
use crate::error::{Error, Result};
use crate::extrema::{count_in_interval, Interval};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub n: usize,
    pub interval: Interval,
    pub replicates: usize,
    /// Proportions with 0, 1, 2 and more than 2 extrema in the interval.
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub p_more: f64,
    /// Proportions with exactly one extremum that is a maximum / minimum.
    pub p_one_max: f64,
    pub p_one_min: f64,
}

/// For each `n` and each neighbourhood, the distribution of the number of
/// extrema of `ψ̂_k` found there.
pub fn theorem_check_extrema_counts(
    base: &ExperimentConfig,
    n_list: &[usize],
    neighbourhoods: &[Interval],
) -> Result<Vec<CountRow>> {
    if neighbourhoods.is_empty() {
        return Err(Error::InvalidArgument("no neighbourhoods given".into()));
    }
    let mut rows = Vec::new();
    for &n in n_list {
        let cfg = ExperimentConfig {
            n,
            bootstrap: None,
            ..base.clone()
        };
        let res = run_experiment(&cfg)?;
        let ok: Vec<_> = res.records.iter().filter(|r| r.failure.is_none()).collect();
        let total = ok.len().max(1) as f64;
        for j in neighbourhoods {
            let counts: Vec<_> = ok.iter().map(|r| count_in_interval(&r.extrema, j)).collect();
            let frac = |pred: &dyn Fn(&crate::extrema::IntervalCount) -> bool| {
                counts.iter().filter(|c| pred(c)).count() as f64 / total
            };
            rows.push(CountRow {
                n,
                interval: *j,
                replicates: ok.len(),
                p0: frac(&|c| c.nu == 0),
                p1: frac(&|c| c.nu == 1),
                p2: frac(&|c| c.nu == 2),
                p_more: frac(&|c| c.nu > 2),
                p_one_max: frac(&|c| c.nu == 1 && c.max_count == 1),
                p_one_min: frac(&|c| c.nu == 1 && c.min_count == 1),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    /// Replicates in which the true extremum was matched.
    pub detected: usize,
    pub mean_error: Option<f64>,
    /// `None` when fewer than two replicates matched.
    pub sd_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log sd` against `log n`.
    pub slope: Option<f64>,
}

/// Spread of `û − u` for the first true extremum in the config's interval.
pub fn theorem_check_rate(base: &ExperimentConfig, n_list: &[usize]) -> Result<RateTable> {
    let spec = base.spec()?;
    let has_extremum = spec
        .process
        .truth_for(base.component)
        .is_some_and(|t| t.points_in(&base.interval).any(|p| p.order % 2 == 0));
    if !has_extremum {
        return Err(Error::InvalidArgument(format!(
            "component {} of {} has no true extremum in {}",
            base.component, base.scenario, base.interval
        )));
    }
    let mut rows = Vec::new();
    for &n in n_list {
        let cfg = ExperimentConfig {
            n,
            bootstrap: None,
            ..base.clone()
        };
        let errors = run_experiment(&cfg)?.location_errors();
        let m = Moments::of(&errors);
        rows.push(RateRow {
            n,
            detected: errors.len(),
            mean_error: m.as_ref().map(|m| m.mean),
            sd_error: m.and_then(|m| m.sd),
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.sd_error.filter(|s| *s > 0.0).map(|s| ((r.n as f64).ln(), s.ln())))
        .collect();
    Ok(RateTable {
        slope: ls_slope(&pts),
        rows,
    })
}

fn ls_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnRatioRow {
    pub m: usize,
    /// `p̂⁽⁰⁾(J)` per replicate.
    pub p0: Vec<f64>,
    pub ks_uniform: f64,
    pub median: f64,
    pub iqr: f64,
}

/// Distribution of `p̂⁽⁰⁾(J)` across replicates for each resample size.
pub fn theorem_check_mn_ratio(
    base: &ExperimentConfig,
    m_values: &[usize],
    iterations: usize,
) -> Result<Vec<MnRatioRow>> {
    let route = base.bootstrap.map(|b| b.route).unwrap_or_default();
    m_values
        .iter()
        .map(|&m| {
            let cfg = ExperimentConfig {
                bootstrap: Some(BootstrapTemplate {
                    m: MRule::Fixed(m),
                    iterations,
                    route,
                }),
                ..base.clone()
            };
            let p0 = run_experiment(&cfg)?.p0_values();
            if p0.is_empty() {
                return Err(Error::AllDegenerate(cfg.reps));
            }
            Ok(MnRatioRow {
                m,
                ks_uniform: ks_uniform(&p0),
                median: quantile(&p0, 0.5),
                iqr: quantile(&p0, 0.75) - quantile(&p0, 0.25),
                p0,
            })
        })
        .collect()
}

/// Kolmogorov–Smirnov distance between the empirical law of `values` and
/// Uniform[0, 1].
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Linear-interpolation sample quantile (the usual "type 7" definition).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, frac) = (pos.floor() as usize, pos.fract());
    if lo + 1 < v.len() {
        v[lo] + frac * (v[lo + 1] - v[lo])
    } else {
        v[lo]
    }
}
