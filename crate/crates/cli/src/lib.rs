//! Command implementations behind the `assayplan` binary.
//!
//! Settings come from three layers: command-line flags win over the
//! `--config` file, which wins over built-in defaults. Relative paths in a
//! config file are resolved against the file's directory. Every command
//! that writes outputs also writes the fully resolved `effective.toml`
//! next to them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use assayplan_core::config::{
    RunConfig, BENCH_ITERS, BENCH_NE, DEFAULT_ADDR, DEFAULT_TRIALS, PLAN_ITERS, PLAN_NE,
};
use assayplan_core::data::{load_dataset, validate_dataset, Dataset, Schema, ValidationReport};
use assayplan_core::report::{plan_report, PlanReport};
use assayplan_core::synthetic::{run_alignment_benchmark, AlignmentReport, BenchmarkConfig};
use assayplan_core::Error as CoreError;
use clap::{Args, Parser, Subcommand};

pub const EFFECTIVE_CONFIG: &str = "effective.toml";
pub const DEFAULT_OUT: &str = "assayplan-out";

#[derive(Debug, Parser)]
#[command(
    name = "assayplan",
    version,
    about = "Cost-aware assay planning from historical analogs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a dataset, compute feature statistics and report violations.
    Validate(Flags),
    /// Plan an assay sequence for the configured candidate.
    Plan(Flags),
    /// Run the synthetic alignment benchmark against value iteration.
    Benchmark(Flags),
    /// Serve the HTTP session API.
    Serve(Flags),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Historical data CSV.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Column schema (TOML) for the dataset.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Config file (flat TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Minimum goal likelihood along the plan.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Uncertainty threshold that ends the experiment.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Ensemble size.
    #[arg(long)]
    pub ne: Option<usize>,
    /// Search iterations per planner.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Largest batch of assays run together.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub serve_addr: Option<String>,
    /// Append-only session journal for `serve`.
    #[arg(long)]
    pub journal: Option<PathBuf>,
}

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Exit code 1: invalid input or configuration.
pub fn invalid(error: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 1,
        error: error.into(),
    }
}

/// Exit code 2: I/O or parse failure.
pub fn io_failure(error: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 2,
        error: error.into(),
    }
}

fn classify(error: CoreError) -> CliError {
    match error {
        CoreError::Io { .. }
        | CoreError::Csv { .. }
        | CoreError::Schema(_)
        | CoreError::MissingColumn(_)
        | CoreError::NonNumeric { .. }
        | CoreError::MissingValue { .. } => io_failure(error),
        _ => invalid(error),
    }
}

impl Flags {
    fn as_config(&self) -> RunConfig {
        RunConfig {
            dataset: self.dataset.clone(),
            schema: self.schema.clone(),
            out: self.out.clone(),
            seed: self.seed,
            tau: self.tau,
            epsilon: self.epsilon,
            ne: self.ne,
            iters: self.iters,
            m: self.m,
            serve_addr: self.serve_addr.clone(),
            journal: self.journal.clone(),
            ..RunConfig::default()
        }
    }
}

/// Merges flags over the config file. The file is optional.
pub fn merged_config(flags: &Flags) -> CliResult<RunConfig> {
    let file = match &flags.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))
                .map_err(io_failure)?;
            let mut cfg = RunConfig::from_toml_str(&text)
                .with_context(|| format!("config {}", path.display()))
                .map_err(invalid)?;
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [
                &mut cfg.dataset,
                &mut cfg.schema,
                &mut cfg.out,
                &mut cfg.journal,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            cfg
        }
    };
    Ok(file.overlay(flags.as_config()))
}

/// Loads the configured dataset and computes feature statistics.
pub fn load(cfg: &RunConfig) -> CliResult<Dataset> {
    let (dataset, schema) = dataset_paths(cfg)?;
    let schema = Schema::from_path(schema).map_err(classify)?;
    load_dataset(dataset, &schema)
        .and_then(Dataset::with_feature_stats)
        .map_err(classify)
}

fn dataset_paths(cfg: &RunConfig) -> CliResult<(&Path, &Path)> {
    let dataset = cfg.dataset.as_deref().ok_or_else(|| {
        invalid(anyhow!(
            "no dataset given (use --dataset or `dataset` in the config)"
        ))
    })?;
    let schema = cfg.schema.as_deref().ok_or_else(|| {
        invalid(anyhow!(
            "no schema given (use --schema or `schema` in the config)"
        ))
    })?;
    Ok((dataset, schema))
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(io_failure)
}

fn write_effective(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    write_file(&dir.join(EFFECTIVE_CONFIG), cfg.to_toml_string().as_bytes())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(io_failure)
}

/// Loads and checks a dataset. Returns the report; exit 1 when it lists
/// violations.
pub fn cmd_validate(flags: &Flags) -> CliResult<ValidationReport> {
    let cfg = merged_config(flags)?;
    let (dataset, schema) = dataset_paths(&cfg)?;
    let schema = Schema::from_path(schema).map_err(io_failure)?;
    let raw = load_dataset(dataset, &schema).map_err(io_failure)?;
    let report = match raw.clone().with_feature_stats() {
        Ok(ds) => validate_dataset(&ds),
        Err(e) => {
            let mut report = validate_dataset(&raw);
            report
                .violations
                .retain(|v| !v.ends_with("has no statistics"));
            report.violations.insert(0, e.to_string());
            report
        }
    };
    Ok(report)
}

/// Everything `plan` produced, plus where it was written.
#[derive(Debug)]
pub struct PlanOutput {
    pub report: PlanReport,
    pub config: RunConfig,
    pub dir: PathBuf,
}

pub fn cmd_plan(flags: &Flags) -> CliResult<PlanOutput> {
    let cfg = merged_config(flags)?;
    let dataset = load(&cfg)?;
    let root = cfg.candidate_state(&dataset).map_err(classify)?;
    let resolved = cfg.resolved(PLAN_NE, PLAN_ITERS);
    let report =
        plan_report(&dataset, &resolved, &root, PLAN_NE, PLAN_ITERS, true).map_err(classify)?;

    let dir = out_dir(&cfg);
    create_dir(&dir)?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_file(&dir.join("mlasp.json"), json.as_bytes())?;
    let mut votes = Vec::new();
    report.write_votes_csv(&mut votes).map_err(io_failure)?;
    write_file(&dir.join("votes.csv"), &votes)?;
    let mut pareto = Vec::new();
    report.write_pareto_csv(&mut pareto).map_err(io_failure)?;
    write_file(&dir.join("pareto.csv"), &pareto)?;
    write_effective(&dir, &resolved)?;
    Ok(PlanOutput {
        report,
        config: resolved,
        dir,
    })
}

/// Benchmark settings from a run config. `epsilon` is read as a fraction
/// of each trial's root uncertainty.
pub fn benchmark_config(cfg: &RunConfig) -> BenchmarkConfig {
    let defaults = BenchmarkConfig::default();
    BenchmarkConfig {
        n_trials: cfg.n_trials.unwrap_or(DEFAULT_TRIALS),
        master_seed: cfg.seed(),
        kernel: cfg.kernel(),
        n_e: cfg.ne.unwrap_or(BENCH_NE),
        planner: cfg.planner(BENCH_ITERS),
        epsilon_fraction: cfg.epsilon.unwrap_or(defaults.epsilon_fraction),
        penalty: cfg.penalty.unwrap_or(defaults.penalty),
        ..defaults
    }
}

#[derive(Debug)]
pub struct BenchmarkOutput {
    pub report: AlignmentReport,
    pub dir: PathBuf,
}

pub fn cmd_benchmark(flags: &Flags) -> CliResult<BenchmarkOutput> {
    let cfg = merged_config(flags)?;
    let mut resolved = cfg.resolved(BENCH_NE, BENCH_ITERS);
    resolved.n_trials = Some(cfg.n_trials.unwrap_or(DEFAULT_TRIALS));
    let report = run_alignment_benchmark(&benchmark_config(&resolved)).map_err(invalid)?;

    let dir = out_dir(&cfg);
    create_dir(&dir)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(io_failure)?;
    write_file(&dir.join("alignment.csv"), &csv)?;
    let mut summary = serde_json::to_string_pretty(&report.summary()).expect("summary serializes");
    summary.push('\n');
    write_file(&dir.join("summary.json"), summary.as_bytes())?;
    write_effective(&dir, &resolved)?;
    Ok(BenchmarkOutput { report, dir })
}

/// Binds the listener and serves until Ctrl-C.
pub async fn cmd_serve(flags: &Flags) -> CliResult<()> {
    let cfg = merged_config(flags)?;
    let dataset = load(&cfg)?;
    let addr = cfg
        .serve_addr
        .clone()
        .unwrap_or_else(|| DEFAULT_ADDR.to_string());
    let state = assayplan_service::AppState::new(dataset, cfg.clone(), cfg.journal.as_deref())
        .map_err(io_failure)?;
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .with_context(|| format!("cannot bind {addr}"))
        .map_err(io_failure)?;
    let local = listener.local_addr().map_err(io_failure)?;
    println!("listening on http://{local}");
    let _ = std::io::stdout().flush();
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    assayplan_service::serve(listener, state, shutdown)
        .await
        .map_err(io_failure)
}
