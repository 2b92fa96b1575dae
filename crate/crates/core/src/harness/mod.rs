//! Monte Carlo experiments on the synthetic scenarios.
//!
//! Replicate `r` draws its sample from `SeedTree(seed).child(r).stream(0)` and
//! seeds its bootstrap with `child(r).child(1)`, so every record depends only
//! on `(seed, r)` and results are identical for any worker count.

mod kde;
mod theorem;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_bootstrap, BootstrapAssessment, BootstrapConfig, BootstrapRoute, NuProportions, NU_BUCKETS};
use crate::error::{Error, Result};
use crate::extrema::{count_in_interval, find_extrema, CriticalPoint, ExtremumKind, Interval};
use crate::fpca::{align_sign, Fpca};
use crate::rng::SeedTree;
use crate::synth::{generate_sample, standard_spec, CriticalKind, ProcessSpec, Scenario, ScoreLaw, StandardSpec};

pub use kde::{default_eval_grid, kde, lscv_bandwidth, DensityEstimate};
pub use theorem::{
    ks_uniform, quantile, theorem_check_extrema_counts, theorem_check_mn_ratio, theorem_check_rate,
    CountRow, MnRatioRow, RateRow, RateTable,
};

/// Resample size rule for the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MRule {
    /// `⌊2n^0.6⌋`.
    #[default]
    Default,
    Fixed(usize),
}

impl MRule {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            MRule::Default => crate::bootstrap::default_m(n),
            MRule::Fixed(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapTemplate {
    pub m: MRule,
    pub iterations: usize,
    #[serde(default)]
    pub route: BootstrapRoute,
}

impl Default for BootstrapTemplate {
    fn default() -> Self {
        BootstrapTemplate {
            m: MRule::Default,
            iterations: 300,
            route: BootstrapRoute::ScoreSpace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub score_law: ScoreLaw,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// 1-based component under study.
    pub component: usize,
    /// Interval `J` in which extrema are counted.
    pub interval: Interval,
    /// Interior margin for extremum detection.
    pub margin: f64,
    pub bootstrap: Option<BootstrapTemplate>,
    /// Constant added to every curve.
    #[serde(default)]
    pub mean_shift: f64,
}

impl ExperimentConfig {
    /// Defaults of the standard study: n = 300, 200 replicates, `J` and component from the
    /// scenario, bootstrap with `m = ⌊2n^0.6⌋` and B = 300.
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        ExperimentConfig {
            scenario,
            score_law: ScoreLaw::Gaussian,
            n: 300,
            reps: 200,
            seed,
            component: scenario.component(),
            interval: scenario.default_interval(),
            margin: 0.0,
            bootstrap: Some(BootstrapTemplate::default()),
            mean_shift: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if self.n < 4 {
            return Err(Error::InvalidArgument(format!("n = {} is below 4", self.n)));
        }
        if let Some(b) = &self.bootstrap {
            let m = b.m.resolve(self.n);
            if m < 2 || m > self.n {
                return Err(Error::InvalidArgument(format!("resample size {m} must lie in 2..={}", self.n)));
            }
            if b.iterations == 0 {
                return Err(Error::InvalidArgument("bootstrap iterations must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// The scenario's process for this config's sample size and score law.
    pub fn spec(&self) -> Result<StandardSpec> {
        let scenario = match self.scenario {
            Scenario::Fig5 { delta_exponent, .. } => Scenario::Fig5 { delta_exponent, n: self.n },
            other => other,
        };
        let mut spec = standard_spec(&scenario, self.score_law)?;
        spec.process.mean_shift = self.mean_shift;
        if self.component == 0 || self.component > spec.process.components() {
            return Err(Error::ComponentOutOfRange {
                requested: self.component,
                available: spec.process.components(),
            });
        }
        self.interval.check_within(spec.process.grid.start(), spec.process.grid.end())?;
        Ok(spec)
    }
}

/// Compact bootstrap outcome kept per replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRecord {
    pub m: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub p_hat: f64,
    pub pi_hat: f64,
    pub nu_proportions: NuProportions,
    pub degenerate_count: usize,
}

impl From<&BootstrapAssessment> for BootstrapRecord {
    fn from(a: &BootstrapAssessment) -> Self {
        BootstrapRecord {
            m: a.m,
            b: a.b,
            p_hat: a.p_hat,
            pi_hat: a.pi_hat,
            nu_proportions: a.nu_proportions,
            degenerate_count: a.degenerate_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    /// All detected extrema of the sign-aligned `ψ̂_k`.
    pub extrema: Vec<CriticalPoint>,
    /// Extrema falling in `J`.
    pub nu: usize,
    pub max_in_interval: usize,
    pub min_in_interval: usize,
    /// `û − u` for the first true extremum in `J`, matched to the nearest
    /// detected extremum of the same kind in `J`.
    pub location_error: Option<f64>,
    pub bootstrap: Option<BootstrapRecord>,
    /// Reason the replicate could not be fully processed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    /// `None` with fewer than two values.
    pub sd: Option<f64>,
}

impl Moments {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let sd = (count > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        });
        Some(Moments { count, mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub reps: usize,
    pub failures: usize,
    /// Proportion of replicates whose `ψ̂_k` has ν extrema in `J`.
    pub nu_proportions: NuProportions,
    pub pi_hat: Option<Moments>,
    pub p_hat: Option<Moments>,
    pub location_error: Option<Moments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<ReplicateRecord>,
    pub summary: ExperimentSummary,
}

impl ExperimentResult {
    pub fn pi_hats(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.bootstrap.as_ref().map(|b| b.pi_hat)).collect()
    }

    pub fn p0_values(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.bootstrap.as_ref().map(|b| b.nu_proportions.get(0)))
            .collect()
    }

    pub fn location_errors(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.location_error).collect()
    }

    /// Replicates as JSON lines followed by nothing else.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            config: &'a ExperimentConfig,
            summary: &'a ExperimentSummary,
        }
        serde_json::to_writer_pretty(
            &mut w,
            &Out {
                config: &self.config,
                summary: &self.summary,
            },
        )?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// Writes `replicates.jsonl` and `summary.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_jsonl(std::io::BufWriter::new(std::fs::File::create(dir.join("replicates.jsonl"))?))?;
        self.write_summary(std::fs::File::create(dir.join("summary.json"))?)?;
        Ok(())
    }
}

fn matching_kind(kind: CriticalKind) -> Option<ExtremumKind> {
    match kind {
        CriticalKind::Max => Some(ExtremumKind::LocalMax),
        CriticalKind::Min => Some(ExtremumKind::LocalMin),
        CriticalKind::Shoulder => None,
    }
}

/// `û − u` for the first true extremum of `process` component `k` in `j`.
fn location_error(process: &ProcessSpec, k: usize, j: &Interval, found: &[CriticalPoint]) -> Option<f64> {
    let (u, kind) = process
        .truth_for(k)?
        .points_in(j)
        .find_map(|p| matching_kind(p.kind).map(|kind| (p.location, kind)))?;
    found
        .iter()
        .filter(|p| p.kind == kind && j.contains(p.location))
        .map(|p| p.location - u)
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
}

fn run_replicate(cfg: &ExperimentConfig, process: &ProcessSpec, r: usize) -> Result<ReplicateRecord> {
    let node = SeedTree::new(cfg.seed).child(r as u64);
    let sample = generate_sample(process, cfg.n, &mut node.stream(0))?;
    let k = cfg.component;
    let mut record = ReplicateRecord {
        replicate: r,
        extrema: Vec::new(),
        nu: 0,
        max_in_interval: 0,
        min_in_interval: 0,
        location_error: None,
        bootstrap: None,
        failure: None,
    };
    let mut fit = match Fpca::fit(&sample, k) {
        Ok(f) if f.system.count() >= k => f,
        Ok(f) => {
            record.failure = Some(format!("only {} components retained", f.system.count()));
            return Ok(record);
        }
        Err(e) if e.is_numerical() => {
            record.failure = Some(e.to_string());
            return Ok(record);
        }
        Err(e) => return Err(e),
    };
    fit.system.align_to(&process.eigenfunctions)?;
    let psi = align_sign(fit.system.component(k)?, &process.eigenfunctions[k - 1])?;
    record.extrema = find_extrema(&psi, cfg.margin)?;
    let c = count_in_interval(&record.extrema, &cfg.interval);
    record.nu = c.nu;
    record.max_in_interval = c.max_count;
    record.min_in_interval = c.min_count;
    record.location_error = location_error(process, k, &cfg.interval, &record.extrema);

    if let Some(t) = &cfg.bootstrap {
        let bcfg = BootstrapConfig {
            component: k,
            resample_size: t.m.resolve(cfg.n),
            iterations: t.iterations,
            interval: cfg.interval,
            margin: cfg.margin,
            seed: node.child(1).seed(),
            route: t.route,
        };
        match run_bootstrap(&sample, &fit.system, &bcfg) {
            Ok(a) => record.bootstrap = Some(BootstrapRecord::from(&a)),
            Err(e) if e.is_numerical() => record.failure = Some(e.to_string()),
            Err(e) => return Err(e),
        }
    }
    Ok(record)
}

pub fn summarize(records: &[ReplicateRecord]) -> ExperimentSummary {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.failure.is_none()).collect();
    let mut counts = [0usize; NU_BUCKETS];
    for r in &ok {
        counts[NuProportions::bucket(r.nu)] += 1;
    }
    let mut props = [0.0; NU_BUCKETS];
    if !ok.is_empty() {
        for (p, c) in props.iter_mut().zip(counts) {
            *p = c as f64 / ok.len() as f64;
        }
    }
    let boot: Vec<&BootstrapRecord> = records.iter().filter_map(|r| r.bootstrap.as_ref()).collect();
    let errors: Vec<f64> = ok.iter().filter_map(|r| r.location_error).collect();
    ExperimentSummary {
        reps: records.len(),
        failures: records.len() - ok.len(),
        nu_proportions: NuProportions(props),
        pi_hat: Moments::of(&boot.iter().map(|b| b.pi_hat).collect::<Vec<_>>()),
        p_hat: Moments::of(&boot.iter().map(|b| b.p_hat).collect::<Vec<_>>()),
        location_error: Moments::of(&errors),
    }
}

/// Runs all replicates in parallel; order and values are independent of
/// the rayon pool size.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let spec = cfg.spec()?;
    let records = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_replicate(cfg, &spec.process, r))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&records);
    Ok(ExperimentResult {
        config: cfg.clone(),
        records,
        summary,
    })
}
