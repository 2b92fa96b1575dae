//! Experiment configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. Top-level keys set
//! defaults, `case.<name>.<key>` overrides them for one named case. With no
//! case, the file describes a single case called `main`.
//!
//! ```text
//! scenario = fig2(1.2)          # fig2(λ) | fig3 | fig4(λ) | fig5(e)
//! score_law = gaussian          # gaussian | centered-half-normal
//! n = 300
//! reps = 200
//! seed = 7
//! component = 1                 # default: the scenario's feature component
//! interval = 0.6:0.8            # default: the scenario's J
//! margin = 0
//! mean_shift = 0
//! bootstrap = true
//! bootstrap.m = default         # default (⌊2n^0.6⌋) or an integer
//! bootstrap.iters = 300
//! bootstrap.route = score-space # score-space | direct
//! check = experiment            # experiment | counts | rate | mn-ratio
//! check.n = 250,1000,4000       # counts, rate
//! check.m = 300,61              # mn-ratio
//! check.intervals = 0.4:0.6     # counts; default: the case interval
//! kde.bandwidth = 0.02          # a number or lscv
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bootstrap::BootstrapRoute;
use crate::error::{Error, Result};
use crate::extrema::Interval;
use crate::harness::{BootstrapTemplate, ExperimentConfig, MRule};
use crate::synth::{Scenario, ScoreLaw};

const KEYS: &[&str] = &[
    "scenario",
    "score_law",
    "n",
    "reps",
    "seed",
    "component",
    "interval",
    "margin",
    "mean_shift",
    "bootstrap",
    "bootstrap.m",
    "bootstrap.iters",
    "bootstrap.route",
    "check",
    "check.n",
    "check.m",
    "check.intervals",
    "kde.bandwidth",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Check {
    Experiment,
    Counts { n: Vec<usize>, intervals: Vec<Interval> },
    Rate { n: Vec<usize> },
    MnRatio { m: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    Fixed(f64),
    Lscv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    pub name: String,
    pub experiment: ExperimentConfig,
    pub check: Check,
    pub bandwidth: Bandwidth,
}

/// Raw key/value pairs, defaults plus per-case overrides, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    defaults: BTreeMap<String, String>,
    cases: Vec<(String, BTreeMap<String, String>)>,
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = ConfigFile::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim().to_string());
            let (case, bare) = match key.strip_prefix("case.") {
                Some(rest) => {
                    let (name, bare) = rest
                        .split_once('.')
                        .ok_or_else(|| config_err(key, "expected case.<name>.<key>"))?;
                    (Some(name), bare)
                }
                None => (None, key),
            };
            if !KEYS.contains(&bare) {
                return Err(config_err(key, format!("unknown key on line {}", i + 1)));
            }
            let map = match case {
                None => &mut out.defaults,
                Some(name) => {
                    if let Some(pos) = out.cases.iter().position(|(n, _)| n == name) {
                        &mut out.cases[pos].1
                    } else {
                        out.cases.push((name.to_string(), BTreeMap::new()));
                        &mut out.cases.last_mut().expect("just pushed").1
                    }
                }
            };
            if map.insert(bare.to_string(), value).is_some() {
                return Err(config_err(key, format!("set twice (line {})", i + 1)));
            }
        }
        Ok(out)
    }

    /// Resolves every case. `seed_override` replaces any `seed` key;
    /// `fallback_seed` serves cases that set none.
    pub fn cases(&self, seed_override: Option<u64>, fallback_seed: Option<u64>) -> Result<Vec<CaseConfig>> {
        let main = [("main".to_string(), BTreeMap::new())];
        let cases = if self.cases.is_empty() { &main[..] } else { &self.cases[..] };
        cases
            .iter()
            .map(|(name, overrides)| {
                let mut merged = self.defaults.clone();
                merged.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
                resolve(name, &merged, seed_override, fallback_seed)
            })
            .collect()
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(key, format!("cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| parse_value(key, t))
        .collect()
}

fn resolve(
    name: &str,
    kv: &BTreeMap<String, String>,
    seed_override: Option<u64>,
    fallback_seed: Option<u64>,
) -> Result<CaseConfig> {
    let get = |k: &str| kv.get(k).map(String::as_str);
    let n: usize = get("n").map_or(Ok(300), |v| parse_value("n", v))?;
    let scenario_text = get("scenario").ok_or_else(|| config_err("scenario", format!("missing for case `{name}`")))?;
    let scenario = Scenario::parse(scenario_text, n).map_err(|e| config_err("scenario", e.to_string()))?;
    let seed = match (seed_override, get("seed"), fallback_seed) {
        (Some(s), _, _) => s,
        (None, Some(v), _) => parse_value("seed", v)?,
        (None, None, Some(s)) => s,
        (None, None, None) => return Err(config_err("seed", format!("missing for case `{name}` and no --seed given"))),
    };
    let mut cfg = ExperimentConfig {
        n,
        ..ExperimentConfig::new(scenario, seed)
    };
    if let Some(v) = get("score_law") {
        cfg.score_law = parse_value::<ScoreLaw>("score_law", v)?;
    }
    if let Some(v) = get("reps") {
        cfg.reps = parse_value("reps", v)?;
    }
    if let Some(v) = get("component") {
        cfg.component = parse_value("component", v)?;
    }
    if let Some(v) = get("interval") {
        cfg.interval = parse_value::<Interval>("interval", v)?;
    }
    if let Some(v) = get("margin") {
        cfg.margin = parse_value("margin", v)?;
    }
    if let Some(v) = get("mean_shift") {
        cfg.mean_shift = parse_value("mean_shift", v)?;
    }
    let enabled: bool = get("bootstrap").map_or(Ok(true), |v| parse_value("bootstrap", v))?;
    cfg.bootstrap = if enabled {
        let mut t = BootstrapTemplate::default();
        if let Some(v) = get("bootstrap.m") {
            t.m = if v == "default" { MRule::Default } else { MRule::Fixed(parse_value("bootstrap.m", v)?) };
        }
        if let Some(v) = get("bootstrap.iters") {
            t.iterations = parse_value("bootstrap.iters", v)?;
        }
        if let Some(v) = get("bootstrap.route") {
            t.route = parse_value::<BootstrapRoute>("bootstrap.route", v)?;
        }
        Some(t)
    } else {
        None
    };

    let need = |k: &str| get(k).ok_or_else(|| config_err(k, format!("required by check in case `{name}`")));
    let check = match get("check").unwrap_or("experiment") {
        "experiment" => Check::Experiment,
        "counts" => Check::Counts {
            n: parse_list("check.n", need("check.n")?)?,
            intervals: match get("check.intervals") {
                Some(v) => parse_list("check.intervals", v)?,
                None => vec![cfg.interval],
            },
        },
        "rate" => Check::Rate {
            n: parse_list("check.n", need("check.n")?)?,
        },
        "mn-ratio" => Check::MnRatio {
            m: parse_list("check.m", need("check.m")?)?,
        },
        other => return Err(config_err("check", format!("unknown check `{other}`"))),
    };
    let bandwidth = match get("kde.bandwidth") {
        None => Bandwidth::Fixed(0.02),
        Some("lscv") => Bandwidth::Lscv,
        Some(v) => Bandwidth::Fixed(parse_value("kde.bandwidth", v)?),
    };
    cfg.validate().map_err(|e| config_err(name, e.to_string()))?;
    Ok(CaseConfig {
        name: name.to_string(),
        experiment: cfg,
        check,
        bandwidth,
    })
}
