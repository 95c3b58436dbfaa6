//! Run configuration: a flat `key = value` file whose keys can all be
//! overridden by the same-named command-line flag.
//!
//! ```text
//! # paths are relative to this file
//! schema = fixtures/schema.toml
//! labels = fixtures/labels.csv
//! query = fixtures/q_ex.sql
//! budget = 1000
//! worker-error = 0.2
//! ```
//!
//! Keys may be written with `-` or `_`. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use veriscope::experiments::ScenarioKind;
use veriscope::risky::RiskLimits;
use veriscope::verifier::{FixedOracle, MajorityVote, Verifier, DEFAULT_VOTE_CAP, DEFAULT_WORKER_ERROR};
use veriscope::{BaselineKind, ReduceConfig};

macro_rules! keys {
    ($($field:ident),* $(,)?) => {
        /// Flags mirroring every configuration key.
        #[derive(clap::Args, Debug, Default)]
        pub struct Keys {
            $(
                #[arg(long, global = true, value_name = "VALUE", num_args = 0..=1, default_missing_value = "true")]
                pub $field: Option<String>,
            )*
        }

        pub const KNOWN_KEYS: &[&str] = &[$(stringify!($field)),*];

        impl Keys {
            pub fn to_map(&self) -> BTreeMap<String, String> {
                let mut m = BTreeMap::new();
                $(
                    if let Some(v) = &self.$field {
                        m.insert(stringify!($field).to_string(), v.clone());
                    }
                )*
                m
            }
        }
    };
}

keys!(
    schema,
    relations_dir,
    labels,
    truth,
    query,
    out,
    seed,
    jobs,
    theta,
    budget,
    verifier,
    worker_error,
    vote_cap,
    oracle_error,
    top_k,
    mu,
    max_candidates,
    time_limit,
    probe_grid,
    probe_impairing,
    reverify,
    reverify_target,
    cross_check_every,
    output,
    baseline,
    p,
    scenario,
    repeats,
    strategies,
);

const PATH_KEYS: &[&str] = &["schema", "relations_dir", "labels", "truth", "query", "out"];

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

/// Parses a config file. Relative paths are resolved against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let key = normalize(key);
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(format!("line {}: unknown key {key}", i + 1));
        }
        let mut value = value.trim().trim_matches('"').to_string();
        if PATH_KEYS.contains(&key.as_str()) && Path::new(&value).is_relative() {
            value = base.join(value).display().to_string();
        }
        map.insert(key, value);
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VerifierKind {
    Majority,
    Oracle,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub schema: Option<PathBuf>,
    pub relations_dir: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub query: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: usize,
    pub budget: u64,
    pub verifier: VerifierKind,
    pub worker_error: f64,
    pub vote_cap: u64,
    pub oracle_error: f64,
    pub reduce: ReduceConfig,
    pub reverify: bool,
    /// 1-based output index.
    pub output: Option<usize>,
    pub baseline: Option<BaselineKind>,
    pub p: f64,
    pub scenarios: Vec<ScenarioKind>,
    pub repeats: usize,
    pub strategies: String,
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, String> {
        match self.0.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| format!("{}: cannot parse {raw:?}", key.replace('_', "-"))),
        }
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        self.0
            .get(key)
            .map(|raw| {
                raw.parse()
                    .map_err(|_| format!("{}: cannot parse {raw:?}", key.replace('_', "-")))
            })
            .transpose()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.0.get(key).map(PathBuf::from)
    }
}

fn check(ok: bool, message: &str) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message.to_string())
    }
}

impl RunConfig {
    /// Flag values win over file values, which win over defaults.
    pub fn resolve(file: BTreeMap<String, String>, flags: BTreeMap<String, String>) -> Result<Self, String> {
        let mut merged = file;
        merged.extend(flags);
        let v = Values(merged);
        let theta: f64 = v.get("theta", 0.0)?;
        check((0.0..=1.0).contains(&theta), "theta must lie in [0, 1]")?;
        let budget: u64 = v.get("budget", 1000)?;
        check(budget >= 1, "budget must be at least 1")?;
        let verifier = match v.get("verifier", "majority".to_string())?.as_str() {
            "majority" | "majority-vote" => VerifierKind::Majority,
            "oracle" | "fixed-oracle" => VerifierKind::Oracle,
            other => return Err(format!("verifier: unknown kind {other:?}")),
        };
        let worker_error: f64 = v.get("worker_error", DEFAULT_WORKER_ERROR)?;
        check(
            worker_error > 0.0 && worker_error <= 0.5 - 1e-6,
            "worker-error must lie in (0, 0.5)",
        )?;
        let oracle_error: f64 = v.get("oracle_error", 0.0)?;
        check((0.0..=0.5).contains(&oracle_error), "oracle-error must lie in [0, 0.5]")?;
        let top_k: usize = v.get("top_k", 1)?;
        let mu: usize = v.get("mu", 50)?;
        check(top_k >= 1 && mu >= 1, "top-k and mu must be at least 1")?;
        let reverify_target: f64 = v.get("reverify_target", 0.3)?;
        check(
            reverify_target > 0.0 && reverify_target < 0.5,
            "reverify-target must lie in (0, 0.5)",
        )?;
        let time_limit: f64 = v.get("time_limit", 10.0)?;
        check(time_limit >= 0.0 && time_limit.is_finite(), "time-limit must be a number of seconds")?;
        let p: f64 = v.get("p", 0.01)?;
        check(p > 0.0 && p < 0.5, "p must lie in (0, 0.5)")?;
        let jobs: usize = v.get("jobs", 1)?;
        check(jobs >= 1, "jobs must be at least 1")?;
        let output: Option<usize> = v.opt("output")?;
        check(output != Some(0), "output indices start at 1")?;
        let baseline = match v.0.get("baseline") {
            None => None,
            Some(raw) => Some(BaselineKind::parse(raw).ok_or_else(|| format!("baseline: unknown kind {raw:?}"))?),
        };
        let scenarios = v
            .get("scenario", "avg".to_string())?
            .split(',')
            .map(|s| ScenarioKind::parse(s).ok_or_else(|| format!("scenario: unknown kind {s:?}")))
            .collect::<Result<Vec<_>, _>>()?;
        let repeats: usize = v.get("repeats", 1)?;
        check(repeats >= 1, "repeats must be at least 1")?;
        let cross_check_every: Option<usize> = v.opt("cross_check_every")?;
        Ok(RunConfig {
            schema: v.path("schema"),
            relations_dir: v.path("relations_dir"),
            labels: v.path("labels"),
            truth: v.path("truth"),
            query: v.path("query"),
            out: v.path("out").unwrap_or_else(|| PathBuf::from("veriscope-out")),
            seed: v.get("seed", 0)?,
            jobs,
            budget,
            verifier,
            worker_error,
            vote_cap: v.get("vote_cap", DEFAULT_VOTE_CAP)?,
            oracle_error,
            reduce: ReduceConfig {
                theta,
                top_k,
                mu,
                risky: RiskLimits {
                    max_candidates: v.get("max_candidates", 64)?,
                    time_limit: Duration::from_secs_f64(time_limit),
                    probe_grid: v.get("probe_grid", false)?,
                    probe_impairing: v.get("probe_impairing", false)?,
                    ..RiskLimits::default()
                },
                reverify_target,
                cross_check_every,
            },
            reverify: v.get("reverify", false)?,
            output,
            baseline,
            p,
            scenarios,
            repeats,
            strategies: v.get("strategies", "all".to_string())?,
        })
    }

    pub fn verifier(&self) -> Result<Box<dyn Verifier>, String> {
        Ok(match self.verifier {
            VerifierKind::Majority => Box::new(
                MajorityVote::new(self.worker_error, self.vote_cap).map_err(|e| e.to_string())?,
            ),
            VerifierKind::Oracle => Box::new(FixedOracle::new(self.oracle_error).map_err(|e| e.to_string())?),
        })
    }
}
