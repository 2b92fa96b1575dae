//! The `fpcx` command line.
//!
//! Every command writes its results and a `manifest.json` into `--out`.
//! Exit status is 0 on success, 2 for bad input and 3 for numerical failure.

mod table;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::bootstrap::{m_schedule, run_bootstrap, BootstrapAssessment, BootstrapConfig, BootstrapRoute, MSchedule};
use crate::config::{Bandwidth, CaseConfig, Check, ConfigFile};
use crate::error::{Error, Result};
use crate::extrema::{auto_interval, find_extrema, ExtremumKind, Interval};
use crate::fpca::{scores, write_eigenfunctions_csv, Fpca};
use crate::harness::{
    default_eval_grid, kde, lscv_bandwidth, run_experiment, theorem_check_extrema_counts, theorem_check_mn_ratio,
    theorem_check_rate,
};
use crate::io::{read_sample_file, read_values, write_columns, write_sample_file};
use crate::rng::SeedTree;
use crate::synth::{generate_sample, standard_spec, Scenario, ScoreLaw};

pub use table::assessment_table;

#[derive(Debug, Parser)]
#[command(name = "fpcx", version, about = "Functional PCA and bootstrap evidence for extrema of principal components")]
pub struct Cli {
    /// Root seed for all randomness; drawn at random and recorded when omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MMode {
    Default,
    Exploratory,
    List,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalues, eigenfunctions and scores of a curve sample.
    Fpca {
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        components: usize,
    },
    /// Local extrema of one estimated principal component.
    Extrema {
        input: PathBuf,
        /// 1-based component.
        #[arg(short = 'k', long, default_value_t = 1)]
        component: usize,
        #[arg(long, default_value_t = 5)]
        components: usize,
        /// Interior margin excluded at both ends of the domain.
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
    /// Bootstrap likelihood that extrema in given intervals are genuine.
    Assess {
        input: PathBuf,
        #[arg(short = 'k', long, default_value_t = 1)]
        component: usize,
        #[arg(long, default_value_t = 5)]
        components: usize,
        /// Interval `lo:hi`; repeat for several columns.
        #[arg(long = "interval")]
        intervals: Vec<Interval>,
        /// Instead of --interval: one interval of this width per detected extremum.
        #[arg(long, conflicts_with = "intervals")]
        auto_width: Option<f64>,
        #[arg(long, value_enum, default_value_t = MMode::Exploratory)]
        m_mode: MMode,
        /// Resample sizes for `--m-mode list`.
        #[arg(long, value_delimiter = ',')]
        m: Vec<usize>,
        #[arg(long, default_value_t = 500)]
        bootstrap_iters: usize,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value = "score-space")]
        route: BootstrapRoute,
    },
    /// Draws a sample from a synthetic scenario: fig2(λ), fig3, fig4(λ), fig5(e).
    Simulate {
        scenario: String,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value = "gaussian")]
        score_law: ScoreLaw,
    },
    /// Runs a Monte Carlo experiment file.
    Mc { config: PathBuf },
    /// Gaussian kernel density of the first column of a CSV.
    Kde {
        input: PathBuf,
        /// A positive number or `lscv`.
        #[arg(long, default_value = "lscv")]
        bandwidth: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fpca { .. } => "fpca",
            Command::Extrema { .. } => "extrema",
            Command::Assess { .. } => "assess",
            Command::Simulate { .. } => "simulate",
            Command::Mc { .. } => "mc",
            Command::Kde { .. } => "kde",
        }
    }

    fn uses_seed(&self) -> bool {
        matches!(self, Command::Assess { .. } | Command::Simulate { .. } | Command::Mc { .. })
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    /// `flag` or `random`.
    pub seed_source: Option<&'static str>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
    pub threads: usize,
    pub version: &'static str,
    pub duration_seconds: f64,
}

/// 2 for bad input, 3 for numerical failure.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Outputs<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.written.push(name.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        std::io::Write::write_all(&mut w, b"\n")?;
        Ok(())
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let started = Instant::now();
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads);
    if threads == 0 {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (seed, seed_source) = match (cli.command.uses_seed(), cli.seed) {
        (false, _) => (None, None),
        (true, Some(s)) => (Some(s), Some("flag")),
        (true, None) => (Some(rand::random::<u64>()), Some("random")),
    };

    fs::create_dir_all(&cli.out)?;
    let mut out = Outputs {
        dir: &cli.out,
        written: Vec::new(),
    };
    let inputs = match &cli.command {
        Command::Fpca { input, .. }
        | Command::Extrema { input, .. }
        | Command::Assess { input, .. }
        | Command::Kde { input, .. } => vec![input.clone()],
        Command::Mc { config } => vec![config.clone()],
        Command::Simulate { .. } => Vec::new(),
    };
    let params = pool.install(|| match &cli.command {
        Command::Fpca { input, components } => cmd_fpca(input, *components, &mut out),
        Command::Extrema {
            input,
            component,
            components,
            epsilon,
        } => cmd_extrema(input, *component, *components, *epsilon, &mut out),
        Command::Assess { .. } => cmd_assess(&cli.command, seed.expect("assess is seeded"), &mut out),
        Command::Simulate { scenario, n, score_law } => {
            cmd_simulate(scenario, *n, *score_law, seed.expect("simulate is seeded"), &mut out)
        }
        Command::Mc { config } => cmd_mc(config, cli.seed, seed.expect("mc is seeded"), &mut out),
        Command::Kde { input, bandwidth } => cmd_kde(input, bandwidth, &mut out),
    })?;

    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        argv,
        params,
        seed,
        seed_source,
        inputs,
        outputs: out.written.clone(),
        threads,
        version: env!("CARGO_PKG_VERSION"),
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    let mut w = BufWriter::new(File::create(cli.out.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

fn cmd_fpca(input: &Path, components: usize, out: &mut Outputs) -> Result<serde_json::Value> {
    let sample = read_sample_file(input)?;
    let fit = Fpca::fit(&sample, components)?;
    let es = &fit.system;
    let share = es.variance_explained();
    let cumulative: Vec<f64> = share
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s;
            Some(*acc)
        })
        .collect();
    let index: Vec<f64> = (1..=es.count()).map(|k| k as f64).collect();
    write_columns(
        out.create("eigenvalues.csv")?,
        &["component", "eigenvalue", "share", "cumulative"],
        &[&index, es.eigenvalues(), &share, &cumulative],
    )?;
    write_eigenfunctions_csv(out.create("eigenfunctions.csv")?, es)?;
    write_columns(out.create("mean.csv")?, &["x", "mean"], &[sample.grid().points(), fit.mean.values()])?;
    let sc = scores(&sample, es)?;
    let names: Vec<String> = (1..=sc.ncols()).map(|k| format!("score_{k}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let cols: Vec<Vec<f64>> = (0..sc.ncols()).map(|k| sc.values().column(k).iter().copied().collect()).collect();
    let cols: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    write_columns(out.create("scores.csv")?, &names, &cols)?;
    out.json("eigensystem.json", es)?;

    println!("{:>9}  {:>14}  {:>8}  {:>10}", "component", "eigenvalue", "share", "cumulative");
    for k in 0..es.count() {
        println!(
            "{:>9}  {:>14.6e}  {:>7.2}%  {:>9.2}%",
            k + 1,
            es.eigenvalues()[k],
            100.0 * share[k],
            100.0 * cumulative[k]
        );
    }
    if let Some(last) = cumulative.last() {
        println!(
            "the first {} components explain {:.1}% of total variability ({} curves)",
            es.count(),
            100.0 * last,
            sample.n()
        );
    }
    if !es.near_ties().is_empty() {
        log::warn!("near-tied eigenvalues after components {:?}", es.near_ties().iter().map(|i| i + 1).collect::<Vec<_>>());
    }
    Ok(json!({ "components": components, "n": sample.n(), "grid_points": sample.grid().len() }))
}

#[derive(Serialize)]
struct ExtremumReport {
    location: f64,
    kind: ExtremumKind,
    value: f64,
}

fn cmd_extrema(input: &Path, k: usize, components: usize, epsilon: f64, out: &mut Outputs) -> Result<serde_json::Value> {
    let sample = read_sample_file(input)?;
    let fit = Fpca::fit(&sample, components)?;
    let psi = fit.system.component(k)?;
    let report: Vec<ExtremumReport> = find_extrema(psi, epsilon)?
        .into_iter()
        .map(|p| ExtremumReport {
            location: p.location,
            kind: p.kind,
            value: p.value,
        })
        .collect();
    out.json("extrema.json", &report)?;
    println!("{:>4}  {:>12}  {:>12}", "kind", "location", "value");
    for e in &report {
        println!("{:>4}  {:>12.6}  {:>12.6}", e.kind.label(), e.location, e.value);
    }
    Ok(json!({ "component": k, "components": components, "epsilon": epsilon }))
}

fn cmd_assess(cmd: &Command, seed: u64, out: &mut Outputs) -> Result<serde_json::Value> {
    let Command::Assess {
        input,
        component: k,
        components,
        intervals,
        auto_width,
        m_mode,
        m,
        bootstrap_iters,
        epsilon,
        route,
    } = cmd
    else {
        unreachable!("dispatched on Assess");
    };
    let k = *k;
    if *bootstrap_iters == 0 {
        return Err(Error::InvalidArgument("--bootstrap-iters must be at least 1".into()));
    }
    let sample = read_sample_file(input)?;
    let fit = Fpca::fit(&sample, *components)?;
    let psi = fit.system.component(k)?;
    let grid = sample.grid();

    let columns: Vec<(String, Interval)> = match auto_width {
        Some(width) => find_extrema(psi, *epsilon)?
            .iter()
            .map(|p| Ok((format!("{} {:.3}", p.kind.label(), p.location), auto_interval(psi, p.location, *width)?)))
            .collect::<Result<_>>()?,
        None => intervals.iter().map(|j| (j.to_string(), *j)).collect(),
    };
    if columns.is_empty() {
        return Err(Error::InvalidArgument(match auto_width {
            Some(_) => format!("component {k} has no detected extrema to assess"),
            None => "give at least one --interval or --auto-width".into(),
        }));
    }
    for (_, j) in &columns {
        j.check_within(grid.start(), grid.end())?;
    }
    let schedule = match m_mode {
        MMode::Default => MSchedule::Default,
        MMode::Exploratory => MSchedule::Exploratory,
        MMode::List => MSchedule::List(m.clone()),
    };
    let ms = m_schedule(sample.n(), &schedule)?;

    // One seed per m, shared by all columns: every interval is read off the
    // same bootstrap eigenfunctions, as in a single assessment table.
    let tree = SeedTree::new(seed);
    let mut cells: Vec<Vec<BootstrapAssessment>> = Vec::new();
    for (row, &mi) in ms.iter().enumerate() {
        let row_seed = tree.child(row as u64).seed();
        let assessments = columns
            .iter()
            .map(|(_, j)| {
                run_bootstrap(
                    &sample,
                    &fit.system,
                    &BootstrapConfig {
                        component: k,
                        resample_size: mi,
                        iterations: *bootstrap_iters,
                        interval: *j,
                        margin: *epsilon,
                        seed: row_seed,
                        route: *route,
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push(assessments);
    }

    let labels: Vec<String> = columns.iter().map(|(l, _)| l.clone()).collect();
    let text = assessment_table(k, *bootstrap_iters, &labels, &cells);
    print!("{text}");
    std::io::Write::write_all(&mut out.create("table.txt")?, text.as_bytes())?;
    let flat: Vec<&BootstrapAssessment> = cells.iter().flatten().collect();
    out.json("assessment.json", &flat)?;
    Ok(json!({
        "component": k,
        "components": components,
        "intervals": columns.iter().map(|(label, j)| json!({ "label": label, "interval": j })).collect::<Vec<_>>(),
        "m": ms,
        "bootstrap_iters": bootstrap_iters,
        "epsilon": epsilon,
        "route": route,
    }))
}

#[derive(Serialize)]
struct TruthSidecar<'a> {
    scenario: Scenario,
    n: usize,
    seed: u64,
    score_law: ScoreLaw,
    delta: Option<f64>,
    component: usize,
    interval: Interval,
    eigenvalues: &'a [f64],
    critical_points: &'a [Option<crate::synth::GroundTruth>],
    perturbation: Option<crate::synth::PerturbationSpec>,
}

fn cmd_simulate(scenario: &str, n: usize, law: ScoreLaw, seed: u64, out: &mut Outputs) -> Result<serde_json::Value> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let scenario = Scenario::parse(scenario, n)?;
    let spec = standard_spec(&scenario, law)?;
    let sample = generate_sample(&spec.process, n, &mut SeedTree::new(seed).stream(0))?;
    out.written.push("sample.csv".into());
    write_sample_file(&out.dir.join("sample.csv"), &sample)?;
    out.json(
        "truth.json",
        &TruthSidecar {
            scenario,
            n,
            seed,
            score_law: law,
            delta: scenario.delta(),
            component: scenario.component(),
            interval: scenario.default_interval(),
            eigenvalues: &spec.process.eigenvalues,
            critical_points: &spec.process.truth,
            perturbation: spec.perturbation,
        },
    )?;
    println!("{n} curves of {scenario} on {} points", sample.grid().len());
    Ok(json!({ "scenario": scenario.to_string(), "n": n, "score_law": law }))
}

fn density_csv(values: &[f64], bandwidth: Bandwidth, out: &mut Outputs, name: &str) -> Result<f64> {
    let h = match bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Lscv => lscv_bandwidth(values)?,
    };
    let d = kde(values, h, &default_eval_grid(values, h)?)?;
    d.write_csv(out.create(name)?)?;
    Ok(h)
}

fn run_case(case: &CaseConfig, out: &mut Outputs) -> Result<()> {
    let dir = &case.name;
    let cfg = &case.experiment;
    match &case.check {
        Check::Experiment => {
            let res = run_experiment(cfg)?;
            res.write_jsonl(out.create(&format!("{dir}/replicates.jsonl"))?)?;
            res.write_summary(out.create(&format!("{dir}/summary.json"))?)?;
            let pi = res.pi_hats();
            if !pi.is_empty() {
                density_csv(&pi, case.bandwidth, out, &format!("{dir}/pi_hat_density.csv"))?;
            }
            let s = &res.summary;
            println!(
                "{dir}: {} on ψ_{} in {}, {} reps ({} failed); P(ν=0) {:.3}, P(ν=2) {:.3}{}",
                cfg.scenario,
                cfg.component,
                cfg.interval,
                s.reps,
                s.failures,
                s.nu_proportions.get(0),
                s.nu_proportions.get(2),
                s.pi_hat.as_ref().map_or(String::new(), |m| format!(", mean π̂ {:.3}", m.mean))
            );
        }
        Check::Counts { n, intervals } => {
            let rows = theorem_check_extrema_counts(cfg, n, intervals)?;
            out.json(&format!("{dir}/counts.json"), &rows)?;
            for r in &rows {
                println!(
                    "{dir}: n = {} in {}: P0 {:.3} P1 {:.3} P2 {:.3} P>2 {:.3}",
                    r.n, r.interval, r.p0, r.p1, r.p2, r.p_more
                );
            }
        }
        Check::Rate { n } => {
            let table = theorem_check_rate(cfg, n)?;
            out.json(&format!("{dir}/rate.json"), &table)?;
            for r in &table.rows {
                println!("{dir}: n = {} sd(û − u) = {:?}", r.n, r.sd_error);
            }
            println!("{dir}: log-log slope {:?}", table.slope);
        }
        Check::MnRatio { m } => {
            let iterations = cfg.bootstrap.map_or(300, |b| b.iterations);
            let rows = theorem_check_mn_ratio(cfg, m, iterations)?;
            out.json(&format!("{dir}/mn_ratio.json"), &rows)?;
            for r in &rows {
                println!(
                    "{dir}: m = {}: KS to uniform {:.3}, median {:.3}, IQR {:.3}",
                    r.m, r.ks_uniform, r.median, r.iqr
                );
            }
        }
    }
    Ok(())
}

fn cmd_mc(config: &Path, seed_flag: Option<u64>, seed: u64, out: &mut Outputs) -> Result<serde_json::Value> {
    let text = fs::read_to_string(config)?;
    let cases = ConfigFile::parse(&text)?.cases(seed_flag, Some(seed))?;
    for case in &cases {
        info!("case {}: {}", case.name, case.experiment.scenario);
        run_case(case, out)?;
    }
    Ok(serde_json::to_value(&cases)?)
}

fn cmd_kde(input: &Path, bandwidth: &str, out: &mut Outputs) -> Result<serde_json::Value> {
    let values = read_values(File::open(input)?)?;
    let bw = match bandwidth {
        "lscv" => Bandwidth::Lscv,
        v => Bandwidth::Fixed(
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("bandwidth must be a number or lscv, got `{v}`")))?,
        ),
    };
    let h = density_csv(&values, bw, out, "density.csv")?;
    println!("{} values, bandwidth {h:.6}", values.len());
    Ok(json!({ "bandwidth": bandwidth, "selected_bandwidth": h, "values": values.len() }))
}
