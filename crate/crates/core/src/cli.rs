//! Experiment runner behind the `saber` binary: `generate`, `compare` and
//! `replay`.
//!
//! Configuration comes from an optional TOML file, then command-line flags
//! override individual fields. The merged configuration is embedded in every
//! trace's `run_meta` event.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 backend failure,
//! 4 corrupt trace or replay mismatch, 1 any other I/O failure.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, OracleBackend, OracleParams, RemoteBackend};
use crate::error::{ConfigError, RunError, TraceError};
use crate::sampler::{generate, RunContext, SaberConfig, Strategy, ThresholdMode};
use crate::state::{SequenceState, TokenId, VocabSpec};
use crate::telemetry::{
    metrics, replay_trace, trend, write_comparison_csv, ComparisonRow, RunMetrics, Trace,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_CORRUPT_TRACE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("corrupt trace: {0}")]
    CorruptTrace(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::CorruptTrace(_) => EXIT_CORRUPT_TRACE,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::CorruptTrace(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Oracle,
    Remote,
}

/// Oracle fixture parameters; the target itself is derived from each seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub window: usize,
    pub base_conf: f64,
    pub deceive_rate: f64,
    pub deceive_conf: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            window: OracleParams::DEFAULT_WINDOW,
            base_conf: OracleParams::DEFAULT_BASE_CONF,
            deceive_rate: 0.1,
            deceive_conf: OracleParams::DEFAULT_DECEIVE_CONF,
        }
    }
}

impl OracleSettings {
    pub fn params(&self, gen_length: usize, seed: u64, vocab: VocabSpec) -> OracleParams {
        OracleParams {
            window: self.window,
            base_conf: self.base_conf,
            deceive_conf: self.deceive_conf,
            ..OracleParams::fixture(gen_length, self.deceive_rate, seed, vocab)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    /// Strategies run by `compare`.
    pub strategies: Vec<Strategy>,
    pub backend: BackendKind,
    pub remote_url: Option<String>,
    pub remote_timeout_ms: u64,
    pub vocab_size: u32,
    pub mask_id: TokenId,
    pub prompt: Vec<TokenId>,
    pub gen_length: usize,
    pub block_length: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Upper bound on concurrently executing runs in `compare`.
    pub parallel: usize,
    pub oracle: OracleSettings,
    pub saber: SaberConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategy: "saber".parse().expect("builtin strategy"),
            strategies: vec![
                "confidence".parse().expect("builtin strategy"),
                "saber".parse().expect("builtin strategy"),
            ],
            backend: BackendKind::Oracle,
            remote_url: None,
            remote_timeout_ms: 30_000,
            vocab_size: 1024,
            mask_id: 1023,
            prompt: Vec::new(),
            gen_length: 256,
            block_length: crate::sampler::DEFAULT_BLOCK_LENGTH,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            parallel: 4,
            oracle: OracleSettings::default(),
            saber: SaberConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn vocab(&self) -> Result<VocabSpec, ConfigError> {
        VocabSpec::new(self.vocab_size, self.mask_id)
            .map_err(|e| ConfigError::invalid("vocab_size", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.saber.validate()?;
        let vocab = self.vocab()?;
        if self.gen_length == 0 {
            return Err(ConfigError::invalid("gen_length", "must be at least 1"));
        }
        if self.block_length == 0 {
            return Err(ConfigError::invalid("block_length", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::invalid(
                "seeds",
                "at least one seed is required",
            ));
        }
        if self.parallel == 0 {
            return Err(ConfigError::invalid("parallel", "must be at least 1"));
        }
        if let Some(t) = self.prompt.iter().find(|&&t| !vocab.contains(t)) {
            return Err(ConfigError::invalid(
                "prompt",
                format!("token {t} outside vocabulary"),
            ));
        }
        match self.backend {
            BackendKind::Remote => {
                if self.remote_url.as_deref().is_none_or(str::is_empty) {
                    return Err(ConfigError::invalid(
                        "remote_url",
                        "the remote backend requires a URL",
                    ));
                }
            }
            BackendKind::Oracle => {
                self.oracle
                    .params(1, 0, vocab)
                    .validate()
                    .map_err(|e| ConfigError::invalid("oracle", e.to_string()))?;
            }
        }
        Ok(())
    }

    fn snapshot(&self, strategy: &Strategy, seed: u64) -> serde_json::Value {
        let effective = ExperimentConfig {
            strategy: strategy.clone(),
            seeds: vec![seed],
            ..self.clone()
        };
        serde_json::to_value(effective).expect("config serializes")
    }
}

/// Contents of `<run_id>.metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub strategy: String,
    pub seed: u64,
    pub completed: bool,
    pub final_gen: Vec<TokenId>,
    pub metrics: RunMetrics,
}

pub fn run_id(strategy: &Strategy, seed: u64) -> String {
    let name: String = strategy
        .to_string()
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{name}-seed{seed}")
}

pub fn trace_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.trace.jsonl"))
}

pub fn metrics_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.metrics.json"))
}

fn write_trace(dir: &Path, run_id: &str, trace: &Trace) -> Result<(), CliError> {
    let file = fs::File::create(trace_path(dir, run_id))?;
    trace.write_jsonl(std::io::BufWriter::new(file))?;
    Ok(())
}

/// Runs one `(strategy, seed)` pair and writes its trace and metrics files.
/// A backend failure still writes the partial trace.
pub fn run_one(
    cfg: &ExperimentConfig,
    strategy: &Strategy,
    seed: u64,
) -> Result<RunReport, CliError> {
    let vocab = cfg.vocab()?;
    let strategy = strategy.clone().with_block_length(cfg.block_length);
    let id = run_id(&strategy, seed);
    let mut ctx = RunContext::new(id.clone(), seed).with_config(cfg.snapshot(&strategy, seed));
    let backend: Box<dyn Backend> = match cfg.backend {
        BackendKind::Oracle => {
            let params = cfg.oracle.params(cfg.gen_length, seed, vocab);
            ctx = ctx.with_target(params.target.clone());
            Box::new(OracleBackend::new(params).map_err(|e| CliError::Validation(e.to_string()))?)
        }
        BackendKind::Remote => {
            let url = cfg.remote_url.as_deref().unwrap_or_default();
            Box::new(
                RemoteBackend::new(url, Duration::from_millis(cfg.remote_timeout_ms))
                    .with_run_id(id.clone()),
            )
        }
    };
    let state = SequenceState::new(cfg.prompt.clone(), cfg.gen_length, vocab)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    fs::create_dir_all(&cfg.output_dir)?;
    let result = match generate(state, backend.as_ref(), &cfg.saber, &strategy, &ctx) {
        Ok(r) => r,
        Err(RunError::Backend {
            step,
            source,
            partial,
        }) => {
            write_trace(&cfg.output_dir, &id, &partial)?;
            return Err(CliError::Backend(format!("{id}: step {step}: {source}")));
        }
        Err(RunError::Config(e)) => return Err(e.into()),
        Err(e) => return Err(CliError::Validation(e.to_string())),
    };
    write_trace(&cfg.output_dir, &id, &result.trace)?;
    let report = RunReport {
        run_id: id.clone(),
        strategy: strategy.to_string(),
        seed,
        completed: result.completed,
        final_gen: result.final_state.gen().to_vec(),
        metrics: metrics(&result.trace)?,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(metrics_path(&cfg.output_dir, &id), json + "\n")?;
    Ok(report)
}

fn summary_row(r: &RunReport) -> String {
    let err = r
        .metrics
        .token_error_rate
        .map_or_else(|| "-".to_string(), |e| format!("{e:.4}"));
    format!(
        "{}\tsteps={}\tcalls={}\ttokens/step={:.3}\tremasks={}\tfallbacks={}\terror={}\tcompleted={}",
        r.run_id,
        r.metrics.steps_used,
        r.metrics.backend_calls,
        r.metrics.mean_tokens_per_step,
        r.metrics.remask_count,
        r.metrics.fallback_count,
        err,
        r.completed
    )
}

/// One run per seed with `cfg.strategy`.
pub fn cmd_generate(
    cfg: &ExperimentConfig,
    out: &mut dyn Write,
) -> Result<Vec<RunReport>, CliError> {
    cfg.validate()?;
    let mut reports = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let report = run_one(cfg, &cfg.strategy, seed)?;
        writeln!(out, "{}", summary_row(&report))?;
        reports.push(report);
    }
    Ok(reports)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every `(strategy, seed)` pair, writes `comparison.csv` and
/// `summary.txt` into the output directory, and prints the summary.
pub fn cmd_compare(
    cfg: &ExperimentConfig,
    strategies: &[Strategy],
    out: &mut dyn Write,
) -> Result<Vec<ComparisonRow>, CliError> {
    cfg.validate()?;
    if strategies.is_empty() {
        return Err(CliError::Validation(
            "at least one strategy is required".into(),
        ));
    }
    let jobs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|s| cfg.seeds.iter().map(move |&seed| (s.clone(), seed)))
        .collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunReport, CliError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..cfg.parallel.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((strategy, seed)) = jobs.get(i) else {
                    break;
                };
                let r = run_one(cfg, strategy, *seed);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });

    let mut rows = Vec::with_capacity(jobs.len());
    for r in results.into_inner().expect("results lock") {
        let report = r.expect("every job ran")?;
        rows.push(ComparisonRow::new(
            report.strategy.clone(),
            report.seed,
            report.completed,
            &report.metrics,
        ));
    }

    let csv = fs::File::create(cfg.output_dir.join("comparison.csv"))?;
    write_comparison_csv(csv, &rows)?;

    let mut summary = String::from("strategy\truns\tsteps\ttokens/step\terror_rate\n");
    for s in strategies {
        let name = s.clone().with_block_length(cfg.block_length).to_string();
        let mine: Vec<&ComparisonRow> = rows.iter().filter(|r| r.strategy == name).collect();
        let (sm, ss) = mean_std(&mine.iter().map(|r| r.steps_used as f64).collect::<Vec<_>>());
        let (tm, ts) = mean_std(
            &mine
                .iter()
                .map(|r| r.mean_tokens_per_step)
                .collect::<Vec<_>>(),
        );
        let errs: Vec<f64> = mine.iter().filter_map(|r| r.token_error_rate).collect();
        let err = if errs.is_empty() {
            "-".to_string()
        } else {
            let (em, es) = mean_std(&errs);
            format!("{em:.4} ± {es:.4}")
        };
        summary.push_str(&format!(
            "{name}\t{}\t{sm:.2} ± {ss:.2}\t{tm:.3} ± {ts:.3}\t{err}\n",
            mine.len()
        ));
    }
    fs::write(cfg.output_dir.join("summary.txt"), &summary)?;
    out.write_all(summary.as_bytes())?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Match,
    Mismatch,
}

/// Replays a trace, checks its invariants and prints the final sequence and
/// metrics. With `verify`, also compares against a metrics file written by
/// the live run.
pub fn cmd_replay(
    trace_file: &Path,
    verify: Option<&Path>,
    out: &mut dyn Write,
) -> Result<Option<Verdict>, CliError> {
    let file = fs::File::open(trace_file)
        .map_err(|e| CliError::Io(format!("{}: {e}", trace_file.display())))?;
    let trace = Trace::read_jsonl(BufReader::new(file))?;
    let state = replay_trace(&trace)?;
    let m = metrics(&trace)?;

    if m.unmask_count - m.remask_count != state.unmasked().len() as u64 {
        return Err(CliError::CorruptTrace(format!(
            "{} unmasks minus {} remasks does not equal {} unmasked positions",
            m.unmask_count,
            m.remask_count,
            state.unmasked().len()
        )));
    }
    if let Some(end) = trace.end() {
        if end.completed != state.is_complete() {
            return Err(CliError::CorruptTrace(format!(
                "run_end says completed={} but replayed state disagrees",
                end.completed
            )));
        }
    }

    let tokens: Vec<String> = state
        .gen()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if state.is_masked(i) {
                "_".into()
            } else {
                t.to_string()
            }
        })
        .collect();
    writeln!(out, "final: {}", tokens.join(" "))?;
    writeln!(
        out,
        "steps={} calls={} unmasks={} remasks={} fallbacks={} tokens/step={:.3} trend={}",
        m.steps_used,
        m.backend_calls,
        m.unmask_count,
        m.remask_count,
        m.fallback_count,
        m.mean_tokens_per_step,
        trend(&m.per_step_mean_confidence).map_or("-".into(), |r| format!("{r:.3}"))
    )?;
    if let Some(e) = m.token_error_rate {
        writeln!(out, "token_error_rate={e:.4}")?;
    }

    let Some(path) = verify else {
        return Ok(None);
    };
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let live: RunReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let verdict = if live.final_gen == state.gen() && live.metrics == m {
        Verdict::Match
    } else {
        Verdict::Mismatch
    };
    writeln!(
        out,
        "verify: {}",
        if verdict == Verdict::Match {
            "match"
        } else {
            "mismatch"
        }
    )?;
    Ok(Some(verdict))
}

#[derive(Debug, Parser)]
#[command(
    name = "saber",
    version,
    about = "Adaptive parallel sampling with backtracking for masked diffusion LMs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one generation per seed and write traces and metrics.
    Generate(RunArgs),
    /// Run every strategy on every seed and write a comparison table.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated strategies, e.g. `confidence,saber`.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<Strategy>,
        /// Compare the full sampler against its ablations.
        #[arg(long)]
        ablate: bool,
    },
    /// Replay a trace file and check it.
    Replay {
        trace: PathBuf,
        /// Metrics file of the live run to compare against.
        #[arg(long)]
        verify: Option<PathBuf>,
    },
}

/// Flags shared by `generate` and `compare`. Every flag overrides the
/// corresponding field of the config file.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub gen_length: Option<usize>,
    #[arg(long)]
    pub block_length: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<u32>,
    #[arg(long)]
    pub mask_id: Option<TokenId>,
    #[arg(long, value_delimiter = ',')]
    pub prompt: Option<Vec<TokenId>>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub parallel: Option<usize>,
    #[arg(long)]
    pub mu: Option<usize>,
    #[arg(long)]
    pub c_max: Option<f64>,
    #[arg(long)]
    pub step_cap_factor: Option<f64>,
    #[arg(long)]
    pub min_net_progress: Option<usize>,
    #[arg(long)]
    pub no_backtracking: bool,
    #[arg(long)]
    pub no_adaptive: bool,
    #[arg(long)]
    pub init_mean: bool,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub base_conf: Option<f64>,
    #[arg(long)]
    pub deceive_rate: Option<f64>,
    #[arg(long)]
    pub deceive_conf: Option<f64>,
}

impl RunArgs {
    /// Loads the config file (if any) and applies the flag overrides.
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+;)*) => {
                $(if let Some(v) = &self.$flag { cfg.$($field).+ = v.clone(); })*
            };
        }
        set! {
            strategy => strategy;
            backend => backend;
            timeout_ms => remote_timeout_ms;
            seeds => seeds;
            gen_length => gen_length;
            block_length => block_length;
            vocab_size => vocab_size;
            mask_id => mask_id;
            prompt => prompt;
            output_dir => output_dir;
            parallel => parallel;
            mu => saber.mu;
            c_max => saber.c_max;
            step_cap_factor => saber.step_cap_factor;
            min_net_progress => saber.min_net_progress;
            window => oracle.window;
            base_conf => oracle.base_conf;
            deceive_rate => oracle.deceive_rate;
            deceive_conf => oracle.deceive_conf;
        }
        if let Some(url) = &self.url {
            cfg.remote_url = Some(url.clone());
        }
        if self.no_backtracking {
            cfg.saber.backtracking_enabled = false;
        }
        if self.no_adaptive {
            cfg.saber.adaptive_enabled = false;
        }
        if self.init_mean {
            cfg.saber.threshold_mode = ThresholdMode::InitMean;
        }
        Ok(cfg)
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.resolve()?;
            cmd_generate(&cfg, out)?;
        }
        Command::Compare {
            run,
            strategies,
            ablate,
        } => {
            let mut cfg = run.resolve()?;
            let mut list = if ablate {
                Strategy::ablation_suite()
            } else {
                Vec::new()
            };
            list.extend(strategies);
            if list.is_empty() {
                list = cfg.strategies.clone();
            }
            cfg.strategies = list.clone();
            cmd_compare(&cfg, &list, out)?;
        }
        Command::Replay { trace, verify } => {
            if cmd_replay(&trace, verify.as_deref(), out)? == Some(Verdict::Mismatch) {
                return Err(CliError::CorruptTrace(
                    "replayed trace does not match the live result".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_VALIDATION;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
