//! Argument handling, repetition and aggregation around core sessions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use serde::Serialize;

use restmarl_core::session::{
    features_without, run_session, Component, SessionConfig, SessionError, SessionOutcome,
    Strategies,
};
use restmarl_core::values::API_KEY_ENV;
use restmarl_sim::{register_sim_transport, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STARTUP: i32 = 3;
pub const AGGREGATE_FILE: &str = "aggregate.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Disable {
    Learning,
    Spdg,
    Llm,
}

impl From<Disable> for Component {
    fn from(d: Disable) -> Self {
        match d {
            Disable::Learning => Component::Learning,
            Disable::Spdg => Component::Spdg,
            Disable::Llm => Component::Llm,
        }
    }
}

/// Test a REST API described by an OpenAPI 3 document.
#[derive(Debug, Clone, Parser)]
#[command(name = "restmarl", version)]
pub struct Args {
    /// OpenAPI 3 document (JSON or YAML).
    #[arg(long)]
    pub spec: PathBuf,
    /// Service base URL; defaults to the document's first server. The `sim`
    /// scheme runs the bundled simulated shop in-process.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Wall-clock budget, e.g. `90s` or `1h`. Defaults to one hour unless
    /// only a request cap is given.
    #[arg(long, value_parser = humantime::parse_duration)]
    pub budget: Option<Duration>,
    /// Stop after this many requests.
    #[arg(long)]
    pub max_requests: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub mutation_rate: f64,
    /// Word embeddings in GloVe text format; defaults to the bundled table.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Chat-completions endpoint; used only when the API key variable is set.
    #[arg(long)]
    pub llm_endpoint: Option<String>,
    #[arg(long)]
    pub llm_model: Option<String>,
    /// Force the deterministic offline value generator.
    #[arg(long)]
    pub llm_stub: bool,
    /// Static header sent with every request, as `Name: value`.
    #[arg(long)]
    pub auth_header: Option<String>,
    /// Per-request timeout.
    #[arg(long, value_parser = humantime::parse_duration)]
    pub timeout: Option<Duration>,
    /// Switch a component off (repeatable).
    #[arg(long, value_enum)]
    pub disable: Vec<Disable>,
    /// Number of sessions; each uses seed + repetition index.
    #[arg(long, default_value_t = 1)]
    pub repeat: u32,
    /// Run repetitions on separate threads.
    #[arg(long)]
    pub parallel: bool,
    /// Report directory.
    #[arg(long, default_value = "restmarl-report")]
    pub out: PathBuf,
}

/// A failure carrying the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let code = match e {
            SessionError::Config(_) => EXIT_CONFIG,
            _ => EXIT_STARTUP,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

fn parse_header(raw: &str) -> Result<(String, String), Failure> {
    match raw.split_once(':') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Failure::config(anyhow::anyhow!(
            "auth header `{raw}` is not `Name: value`"
        ))),
    }
}

/// Builds the session configuration for one run.
pub fn session_config(args: &Args) -> Result<SessionConfig, Failure> {
    let mut c = SessionConfig::new(&args.spec);
    c.base_url = args.base_url.clone();
    c.max_requests = args.max_requests;
    c.time_budget = match (args.budget, args.max_requests) {
        (Some(b), _) => Some(b),
        (None, Some(_)) => None,
        (None, None) => c.time_budget,
    };
    c.seed = args.seed;
    c.mutation_rate = args.mutation_rate;
    c.embeddings = args.embeddings.clone();
    if let Some(t) = args.timeout {
        c.request_timeout = t;
    }
    c.auth_header = args.auth_header.as_deref().map(parse_header).transpose()?;
    c.features = features_without(&args.disable.iter().map(|&d| d.into()).collect());
    c.report_dir = Some(args.out.clone());
    c.llm.seed = args.seed;
    if let Some(m) = &args.llm_model {
        c.llm.model = m.clone();
    }
    let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
    match (&args.llm_endpoint, key, args.llm_stub) {
        (Some(endpoint), Some(key), false) => {
            c.llm_backend = "chat".into();
            c.llm.endpoint = Some(endpoint.clone());
            c.llm.api_key = Some(key);
        }
        (Some(_), None, false) => {
            tracing::warn!("{API_KEY_ENV} is not set; using the offline value generator");
        }
        _ => {}
    }
    if args.repeat == 0 {
        return Err(Failure::config(anyhow::anyhow!(
            "--repeat must be at least 1"
        )));
    }
    c.validate()?;
    Ok(c)
}

/// Default strategies plus the in-process simulated shop.
pub fn strategies() -> Strategies {
    let mut s = Strategies::default();
    register_sim_transport(&mut s.transports, SimConfig::default());
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunDigest {
    pub seed: u64,
    pub requests: u64,
    pub operations_total: usize,
    pub operations_processed: usize,
    pub requests_to_full_coverage: Option<u64>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub runs: Vec<RunDigest>,
    pub median_operations_processed: f64,
    pub median_requests_to_full_coverage: Option<f64>,
    /// Distinct failure keys across runs, with the number of runs that hit each.
    pub failures: BTreeMap<String, usize>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

pub fn aggregate(runs: Vec<RunDigest>) -> Aggregate {
    let mut processed: Vec<f64> = runs.iter().map(|r| r.operations_processed as f64).collect();
    let mut to_full: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.requests_to_full_coverage.map(|v| v as f64))
        .collect();
    let mut failures = BTreeMap::new();
    for r in &runs {
        for key in r.failures.iter().collect::<BTreeSet<_>>() {
            *failures.entry(key.clone()).or_default() += 1;
        }
    }
    Aggregate {
        median_operations_processed: median(&mut processed).unwrap_or(0.0),
        median_requests_to_full_coverage: if to_full.len() == runs.len() {
            median(&mut to_full)
        } else {
            None
        },
        runs,
        failures,
    }
}

fn digest(seed: u64, outcome: &SessionOutcome) -> RunDigest {
    let s = &outcome.summary;
    RunDigest {
        seed,
        requests: s.requests,
        operations_total: s.operations_total,
        operations_processed: s.operations_processed,
        requests_to_full_coverage: s.requests_to_full_coverage,
        failures: s.failures.iter().map(|f| f.dedup_key.clone()).collect(),
    }
}

fn run_dir(out: &Path, index: u32, repeat: u32) -> PathBuf {
    if repeat == 1 {
        out.to_path_buf()
    } else {
        out.join(format!("run-{index:02}"))
    }
}

/// Runs every repetition and writes the reports. Returns one digest per run.
pub fn execute(args: &Args, strategies: &Strategies) -> Result<Vec<RunDigest>, Failure> {
    let base = session_config(args)?;
    let configs: Vec<SessionConfig> = (0..args.repeat)
        .map(|i| {
            let mut c = base.clone();
            c.seed = base.seed.wrapping_add(u64::from(i));
            c.llm.seed = c.seed;
            c.report_dir = Some(run_dir(&args.out, i, args.repeat));
            c
        })
        .collect();
    let results: Vec<Result<SessionOutcome, SessionError>> = if args.parallel && configs.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = configs
                .iter()
                .map(|c| scope.spawn(move || run_session(c, strategies)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("session thread panicked"))
                .collect()
        })
    } else {
        configs.iter().map(|c| run_session(c, strategies)).collect()
    };
    let mut digests = Vec::new();
    for (c, r) in configs.iter().zip(results) {
        digests.push(digest(c.seed, &r?));
    }
    if args.repeat > 1 {
        let agg = aggregate(digests.clone());
        let path = args.out.join(AGGREGATE_FILE);
        let text = serde_json::to_string_pretty(&agg).expect("aggregate serializes");
        fs::write(&path, text + "\n")
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(|error| Failure {
                code: EXIT_STARTUP,
                error,
            })?;
    }
    Ok(digests)
}

/// Writes one summary line per run. A closed pipe is not an error.
pub fn print_digests(digests: &[RunDigest], out: &Path) -> std::io::Result<()> {
    let result = write_digests(&mut std::io::stdout().lock(), digests, out);
    match result {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => other,
    }
}

pub fn write_digests(w: &mut impl Write, digests: &[RunDigest], out: &Path) -> std::io::Result<()> {
    for d in digests {
        writeln!(
            w,
            "seed {}: {} requests, {}/{} operations processed, full coverage after {}, {} distinct server failures",
            d.seed,
            d.requests,
            d.operations_processed,
            d.operations_total,
            d.requests_to_full_coverage
                .map_or_else(|| "never".to_string(), |n| format!("{n} requests")),
            d.failures.len()
        )?;
        for f in &d.failures {
            writeln!(w, "  500: {f}")?;
        }
    }
    writeln!(w, "reports written to {}", out.display())
}
