//! Command-line front end: `run`, `sweep`, `theory` and `ingest`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::algorithms::{run_experiment, Algorithm, RunConfig, Trace};
use crate::error::{Error, Result};
use crate::graph::{build_topology, MixingMatrix, TopologyKind};
use crate::ingest::{self, PartitionScheme};
use crate::metrics;
use crate::problem::{FiniteSumProblem, QuadraticProblem};
use crate::theory;

pub const SEED_ENV: &str = "GTVR_SEED";
const SYNTHETIC_QUADRATIC: &str = "synthetic:quadratic";

#[derive(Debug, Parser)]
#[command(name = "gtvr", version, about = "Decentralized variance-reduced gradient tracking simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment described by a config file.
    Run(RunArgs),
    /// Run a config over a grid of step-sizes, probabilities and seeds.
    Sweep(SweepArgs),
    /// Print step-size bounds and the contraction certificate.
    Theory(TheoryArgs),
    /// Parse, validate and partition a LIBSVM file.
    Ingest(IngestArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write zeros in the wall_ms column.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub eta: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long)]
    pub rho: f64,
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub l: f64,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// Print only the JSON document.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub declared_d: Option<usize>,
    #[arg(long)]
    pub agents: usize,
    #[arg(long, default_value = "shuffled")]
    pub scheme: String,
}

/// One experiment, parsed from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// A LIBSVM path or `synthetic:quadratic`.
    pub dataset: String,
    pub agents: usize,
    pub topology: TopologyKind,
    pub algorithm: Algorithm,
    pub eta: f64,
    pub p: f64,
    pub rounds: u64,
    pub epochs: Option<f64>,
    pub seed: Option<u64>,
    pub lambda1: f64,
    pub metric_every: u64,
    pub output: PathBuf,
    pub max_samples: Option<usize>,
    pub workers: usize,
    pub scheme: PartitionScheme,
    pub declared_d: Option<usize>,
    pub normalize: bool,
    pub jsonl: bool,
    pub timing: bool,
    /// Samples per agent and dimension of the synthetic quadratic.
    pub synthetic_m: usize,
    pub synthetic_d: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: SYNTHETIC_QUADRATIC.into(),
            agents: 10,
            topology: TopologyKind::Ring,
            algorithm: Algorithm::GtVr,
            eta: 0.1,
            p: 0.3,
            rounds: 1000,
            epochs: None,
            seed: None,
            lambda1: 5e-4,
            metric_every: 0,
            output: PathBuf::from("."),
            max_samples: None,
            workers: 1,
            scheme: PartitionScheme::Shuffled { seed: 0 },
            declared_d: None,
            normalize: false,
            jsonl: false,
            timing: true,
            synthetic_m: 20,
            synthetic_d: 4,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("key `{key}`: expected a boolean, got `{value}`"))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), no + 1) {
                return Err(Error::Config(format!(
                    "key `{key}` repeated on lines {prev} and {}",
                    no + 1
                )));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.to_string(),
            "agents" | "n" => self.agents = parse_value(key, value)?,
            "topology" => {
                self.topology = value
                    .parse()
                    .map_err(|e| Error::Config(format!("key `{key}`: {e}")))?
            }
            "algorithm" => {
                self.algorithm = value
                    .parse()
                    .map_err(|e| Error::Config(format!("key `{key}`: {e}")))?
            }
            "eta" => self.eta = parse_value(key, value)?,
            "p" | "P" => self.p = parse_value(key, value)?,
            "rounds" => self.rounds = parse_value(key, value)?,
            "epochs" => self.epochs = Some(parse_value(key, value)?),
            "seed" => self.seed = Some(parse_value(key, value)?),
            "lambda1" => self.lambda1 = parse_value(key, value)?,
            "metric_every" => self.metric_every = parse_value(key, value)?,
            "output" => self.output = PathBuf::from(value),
            "max_samples" => self.max_samples = Some(parse_value(key, value)?),
            "workers" => self.workers = parse_value(key, value)?,
            "scheme" => {
                self.scheme = value
                    .parse()
                    .map_err(|e| Error::Config(format!("key `{key}`: {e}")))?
            }
            "declared_d" => self.declared_d = Some(parse_value(key, value)?),
            "normalize" => self.normalize = parse_bool(key, value)?,
            "jsonl" => self.jsonl = parse_bool(key, value)?,
            "timing" => self.timing = parse_bool(key, value)?,
            "synthetic_m" => self.synthetic_m = parse_value(key, value)?,
            "synthetic_d" => self.synthetic_d = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Checks every field against the preconditions of the modules it feeds.
    pub fn validate(&self) -> Result<()> {
        let key_err = |key: &str, msg: String| Error::Config(format!("key `{key}`: {msg}"));
        if self.agents < 2 {
            return Err(key_err("agents", format!("need at least 2, got {}", self.agents)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(key_err("eta", format!("must be > 0, got {}", self.eta)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(key_err("p", format!("must lie in (0, 1], got {}", self.p)));
        }
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(key_err("lambda1", format!("must be >= 0, got {}", self.lambda1)));
        }
        if self.workers == 0 {
            return Err(key_err("workers", "must be >= 1".into()));
        }
        if let Some(e) = self.epochs {
            if !(e > 0.0) {
                return Err(key_err("epochs", format!("must be > 0, got {e}")));
            }
        }
        if self.max_samples == Some(0) {
            return Err(key_err("max_samples", "must be >= 1".into()));
        }
        if self.dataset == SYNTHETIC_QUADRATIC && (self.synthetic_m == 0 || self.synthetic_d == 0) {
            return Err(key_err("synthetic_m", "synthetic sizes must be positive".into()));
        }
        if let TopologyKind::Random { p_edge, .. } = self.topology {
            if !(p_edge > 0.0 && p_edge <= 1.0) {
                return Err(key_err("topology", format!("edge probability {p_edge} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// Explicit seed, else `GTVR_SEED`, else 0.
    pub fn resolved_seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("{SEED_ENV}: cannot parse `{v}`: {e}"))),
            Err(_) => Ok(0),
        }
    }

    /// Short dataset label used in output file names.
    pub fn dataset_name(&self) -> String {
        if self.dataset == SYNTHETIC_QUADRATIC {
            return "quadratic".into();
        }
        Path::new(&self.dataset)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            algorithm: self.algorithm,
            eta: self.eta,
            p: self.p,
            rounds: if self.epochs.is_some() && self.rounds == 0 {
                u64::MAX
            } else {
                self.rounds
            },
            max_epochs: self.epochs,
            seed,
            metric_every: self.metric_every,
            workers: self.workers,
            timing: self.timing,
        }
    }
}

/// Builds the objective named by the config.
pub fn load_problem(cfg: &ExperimentConfig, seed: u64) -> Result<Box<dyn FiniteSumProblem>> {
    if cfg.dataset == SYNTHETIC_QUADRATIC {
        let q = QuadraticProblem::synthetic(cfg.agents, cfg.synthetic_m, cfg.synthetic_d, seed)?;
        return Ok(Box::new(q));
    }
    let path = Path::new(&cfg.dataset);
    if !path.exists() {
        return Err(Error::Config(format!(
            "key `dataset`: file {} does not exist",
            path.display()
        )));
    }
    let mut raw = ingest::read_libsvm_file(path, cfg.declared_d)?;
    if let Some(cap) = cfg.max_samples {
        raw.truncate(cap);
    }
    if cfg.normalize {
        raw.normalize_rows();
    }
    let (raw, mapping) = ingest::to_binary_labels(&raw)?;
    info!(
        "{}: {} samples, d = {}, labels +1 <- {}, -1 <- {}",
        path.display(),
        raw.len(),
        raw.dim,
        mapping.positive,
        mapping.negative
    );
    let assignment = ingest::partition(raw.len(), cfg.agents, cfg.scheme)?;
    Ok(Box::new(ingest::into_logistic(&raw, &assignment, cfg.lambda1)?))
}

/// Non-fatal comparison of the configured step-size and probability with the
/// proven region.
pub fn theory_warnings(rho: f64, l: f64, eta: f64, p: f64) -> Vec<String> {
    let mut out = Vec::new();
    let lower = match theory::p_lower_bound(rho) {
        Ok(v) => v,
        Err(_) => {
            out.push(format!(
                "rho = {rho:.6} has 3 rho^2 >= 1; no step-size guarantee applies"
            ));
            return out;
        }
    };
    if p <= lower {
        out.push(format!("P = {p} is at or below the lower bound {lower:.6} for rho = {rho:.6}"));
        return out;
    }
    if p < 1.0 {
        if let Ok(bar) = theory::eta_bar(l, rho, p) {
            if eta > bar {
                out.push(format!("eta = {eta} exceeds eta_bar = {bar:.6e}"));
            }
        }
    }
    out
}

/// Runs one experiment and writes `{algo}_{dataset}_{seed}.csv` under the
/// output directory. Returns the trace path.
pub fn run_from_config(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let seed = cfg.resolved_seed()?;
    let name = format!("{}_{}_{}.csv", cfg.algorithm.name(), cfg.dataset_name(), seed);
    run_to(cfg, seed, &cfg.output.join(name))
}

fn run_to(cfg: &ExperimentConfig, seed: u64, path: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let problem = load_problem(cfg, seed)?;
    let topology = build_topology(cfg.topology, cfg.agents)?;
    let w = MixingMatrix::metropolis(&topology)?;
    let l = problem.lipschitz_estimate();
    for msg in theory_warnings(w.rho(), l, cfg.eta, cfg.p) {
        warn!("{msg}");
    }
    info!(
        "{} on {} (n = {}, rho = {:.6}, L = {:.6}, eta = {}, P = {}, seed = {seed})",
        cfg.algorithm,
        cfg.dataset_name(),
        cfg.agents,
        w.rho(),
        l,
        cfg.eta,
        cfg.p
    );
    let trace: Trace = if cfg.rounds == 0 && cfg.epochs.is_none() {
        Vec::new()
    } else {
        run_experiment(problem.as_ref(), &w, &cfg.run_config(seed))?
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    metrics::write_trace(&trace, path, cfg.jsonl)?;
    Ok(path.to_path_buf())
}

fn apply_overrides(cfg: &mut ExperimentConfig, seed: Option<u64>, workers: Option<usize>, no_timing: bool) {
    if seed.is_some() {
        cfg.seed = seed;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if no_timing {
        cfg.timing = false;
    }
}

pub fn sweep(base: &ExperimentConfig, etas: &[f64], ps: &[f64], seeds: &[u64]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for &eta in etas {
        for &p in ps {
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.eta = eta;
                cfg.p = p;
                cfg.seed = Some(seed);
                let name = format!(
                    "{}_{}_{}_eta{}_p{}.csv",
                    cfg.algorithm.name(),
                    cfg.dataset_name(),
                    seed,
                    eta,
                    p
                );
                out.push(run_to(&cfg, seed, &cfg.output.join(name))?);
            }
        }
    }
    Ok(out)
}

fn ingest_summary(args: &IngestArgs) -> Result<String> {
    let scheme: PartitionScheme = args.scheme.parse()?;
    let raw = ingest::read_libsvm_file(&args.input, args.declared_d)?;
    let (raw, mapping) = ingest::to_binary_labels(&raw)?;
    let assignment = ingest::partition(raw.len(), args.agents, scheme)?;
    let nnz: usize = raw.rows.iter().map(|r| r.nnz()).sum();
    let mut s = format!(
        "rows      {}\nfeatures  {}\nnnz       {}\nlabels    +1 <- {}, -1 <- {}\n",
        raw.len(),
        raw.dim,
        nnz,
        mapping.positive,
        mapping.negative
    );
    for (size, count) in ingest::partition_sizes(&assignment) {
        s.push_str(&format!("agents    {count} x {size} samples\n"));
    }
    Ok(s)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let mut cfg = ExperimentConfig::from_file(&a.config)?;
            apply_overrides(&mut cfg, a.seed, a.workers, a.no_timing);
            let path = run_from_config(&cfg)?;
            println!("{}", path.display());
        }
        Command::Sweep(a) => {
            let mut cfg = ExperimentConfig::from_file(&a.config)?;
            apply_overrides(&mut cfg, None, a.workers, a.no_timing);
            for path in sweep(&cfg, &a.eta, &a.p, &a.seeds)? {
                println!("{}", path.display());
            }
        }
        Command::Theory(a) => {
            let report = theory::TheoryReport::compute(a.rho, a.l, a.p, a.n, None, a.eta)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            if a.json {
                println!("{json}");
            } else {
                print!("{report}");
                println!("{json}");
            }
        }
        Command::Ingest(a) => print!("{}", ingest_summary(&a)?),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = ExperimentConfig::parse(
            "# header\nagents = 5\n eta=0.05 # trailing\nalgorithm = dsgd\n\ntopology = random:0.5:3\n",
        )
        .unwrap();
        assert_eq!(cfg.agents, 5);
        assert_eq!(cfg.eta, 0.05);
        assert_eq!(cfg.algorithm, Algorithm::Dsgd);
        assert_eq!(cfg.topology, TopologyKind::Random { p_edge: 0.5, seed: 3 });
        let mut cfg = cfg;
        apply_overrides(&mut cfg, Some(9), Some(4), true);
        assert_eq!((cfg.seed, cfg.workers, cfg.timing), (Some(9), 4, false));
    }

    #[test]
    fn unknown_and_bad_keys_are_named() {
        let e = ExperimentConfig::parse("learning_rate = 1").unwrap_err().to_string();
        assert!(e.contains("learning_rate"));
        let e = ExperimentConfig::parse("eta = fast").unwrap_err().to_string();
        assert!(e.contains("eta"));
        let e = ExperimentConfig::parse("eta = -1").unwrap().validate().unwrap_err().to_string();
        assert!(e.contains("eta"));
        assert!(ExperimentConfig::parse("seed = 1\nseed = 2").is_err());
    }

    #[test]
    fn warnings_are_advisory() {
        let (rho, l) = (0.5, 1.0);
        assert!(theory_warnings(rho, l, 0.1, 0.3)[0].contains("lower bound"));
        assert!(theory_warnings(rho, l, 10.0, 0.9)[0].contains("eta_bar"));
        assert!(theory_warnings(rho, l, 1e-6, 0.9).is_empty());
        assert!(theory_warnings(0.9, l, 0.1, 0.3)[0].contains("rho"));
    }

    #[test]
    fn clap_surface() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from(["gtvr", "sweep", "--config", "c", "--eta", "0.1,0.2", "--p", "0.3", "--seeds", "1,2"]).unwrap();
        match cli.command {
            Command::Sweep(a) => {
                assert_eq!(a.eta, vec![0.1, 0.2]);
                assert_eq!(a.seeds, vec![1, 2]);
            }
            _ => panic!("wrong subcommand"),
        }
    }
}
