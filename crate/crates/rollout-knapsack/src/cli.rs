//! Batch entry point: four subcommands (`allocate`, `simulate`, `theory`,
//! `balance`), a flat `key = value` config format, and deterministic file
//! emission.
//!
//! Every run that emits files into an output directory writes a
//! `manifest.json` first — tool version, resolved configuration, seed, and
//! sha256 digests of every input file — so any output tree can be reproduced
//! bit-exactly from its manifest. File paths inside the manifest are stored
//! as basenames: two runs of the same config into different directories
//! produce identical trees.
//!
//! All real numbers in CSV/JSON-lines outputs are printed with 10
//! significant digits, locale-independent, which is what makes golden-file
//! comparisons meaningful.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::allocator::{
    allocate, brute_force_allocate, AllocationRequest, AllocationTask, AllocationTrace,
    PartitionLabel,
};
use crate::balancer::{kk_dispatch, random_dispatch, WorkerSchedule};
use crate::error::{Error, Result};
use crate::metrics::write_metrics_csv;
use crate::numfmt::fmt_sig10;
use crate::simulator::{
    self, final_status_distribution, transition_matrix, write_histogram_csv,
    write_snapshots_jsonl, write_transition_csv, Binning, LatentInit, Policy, SimConfig,
    SimReport,
};
use crate::types::{
    parse_tasks, Algorithm, AllocationConfig, BudgetPlan, StatusCategory, TaskId, TaskRecord,
};
use crate::value::{
    expected_first_nonzero, high_prob_budget, info_gain_approx, info_gain_exact, task_value,
    SoftmaxState,
};

/// Rollout-budget toolkit: score tasks, solve the budget knapsack, simulate
/// training, and balance rollout schedules across workers.
#[derive(Debug, Parser)]
#[command(name = "rollout-knapsack", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Allocate a rollout budget over a task file.
    Allocate(AllocateArgs),
    /// Emit the theory tables: budget requirements, the value surface, and
    /// the improvement-model comparison.
    Theory(TheoryArgs),
    /// Run the synthetic training simulator.
    Simulate(SimulateArgs),
    /// Spread a budget plan across rollout workers.
    Balance(BalanceArgs),
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    /// Task file: `task_id, est_p[, latent_p[, greedy_prob]]` per line,
    /// `?` for unknown, `#` comments.
    #[arg(long, required_unless_present = "print_config")]
    pub tasks: Option<PathBuf>,
    /// Config file providing `[allocation]` defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (manifest.json, allocations.jsonl, plan.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Total rollouts to hand out (required here or in the config file).
    #[arg(long)]
    pub n_total: Option<u32>,
    /// Per-task floor.
    #[arg(long)]
    pub n_low: Option<u32>,
    /// Per-task ceiling.
    #[arg(long)]
    pub n_up: Option<u32>,
    /// Confidence level for fallback reserves.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Scoring algorithm: grpo, rloo, reinforce, or remax.
    #[arg(long)]
    pub algorithm: Option<Algorithm>,
    /// Route degenerate tasks through the fallback pipeline (the default).
    #[arg(long, conflicts_with = "no_fallback")]
    pub fallback: bool,
    /// Let degenerate tasks compete in the knapsack with zero value.
    #[arg(long)]
    pub no_fallback: bool,
    /// Solve by exhaustive enumeration instead of the DP (small instances
    /// only; a cross-check).
    #[arg(long)]
    pub brute_force: bool,
    /// Print the resolved `[allocation]` config and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    /// Config file providing `[allocation]` defaults for alpha/algorithm.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; without it the tables go to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Recorded in the manifest; the tables use no randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Success-rate grid `lo:hi:count` for the budget table and value
    /// surface; must stay strictly inside (0, 1). Default 0.01:0.99:99.
    #[arg(long)]
    pub p_grid: Option<FloatGrid>,
    /// Budget grid `lo:hi:step` for the value surface. Default 1:64:1.
    #[arg(long)]
    pub n_grid: Option<IntGrid>,
    /// Confidence level for the high-probability budget column.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Scoring algorithm for the value surface (remax is not supported
    /// here: it needs per-task greedy probabilities).
    #[arg(long)]
    pub algorithm: Option<Algorithm>,
    /// Response-space size for the improvement-model comparison table.
    #[arg(long)]
    pub softmax_k: Option<usize>,
    /// Success-rate grid for the comparison table. Default 0:1:101.
    #[arg(long)]
    pub softmax_grid: Option<FloatGrid>,
    /// Print the resolved parameters and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Config file providing `[simulation]` settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; `--compare` writes one subdirectory per policy.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Budget policy; repeat together with --compare to run several on the
    /// same seed.
    #[arg(long = "policy")]
    pub policy: Vec<Policy>,
    /// Run every listed --policy on the same seed and emit a side-by-side
    /// summary.
    #[arg(long)]
    pub compare: bool,
    #[arg(long)]
    pub dataset_size: Option<usize>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long)]
    pub iterations: Option<u32>,
    #[arg(long)]
    pub n_total: Option<u32>,
    #[arg(long)]
    pub n_low: Option<u32>,
    #[arg(long)]
    pub n_up: Option<u32>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub eta_sim: Option<f64>,
    /// `beta(a,b)`, `uniform`, or `constant(p)`.
    #[arg(long)]
    pub latent_init: Option<LatentInit>,
    #[arg(long)]
    pub unsolvable_fraction: Option<f64>,
    /// Print the resolved `[simulation]` config and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    /// Plan file: `task_id, budget` per line, `#` comments.
    #[arg(long)]
    pub plan: PathBuf,
    /// Worker count (at least 1).
    #[arg(long)]
    pub workers: usize,
    /// `kk` keeps each task on one worker; `random` scatters unit jobs.
    #[arg(long, default_value = "kk")]
    pub strategy: Strategy,
    /// Seed for the random strategy.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (manifest.json, schedule.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Worker-assignment strategy of `balance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Random,
    Kk,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Kk => "kk",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(Strategy::Random),
            "kk" => Ok(Strategy::Kk),
            other => Err(format!("unknown strategy '{other}' (expected random or kk)")),
        }
    }
}

/// Evenly spaced float grid parsed from `lo:hi:count` (inclusive ends).
#[derive(Debug, Clone, PartialEq)]
pub struct FloatGrid {
    pub spec: String,
    pub points: Vec<f64>,
}

impl FromStr for FloatGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("grid '{s}' must be lo:hi:count"));
        }
        let lo: f64 = parts[0]
            .trim()
            .parse()
            .map_err(|_| format!("bad grid start '{}'", parts[0]))?;
        let hi: f64 = parts[1]
            .trim()
            .parse()
            .map_err(|_| format!("bad grid end '{}'", parts[1]))?;
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| format!("bad grid count '{}'", parts[2]))?;
        if !lo.is_finite() || !hi.is_finite() {
            return Err(format!("grid '{s}' has a non-finite endpoint"));
        }
        if count == 0 {
            return Err("grid needs at least one point".to_string());
        }
        if lo > hi {
            return Err(format!("grid start {lo} exceeds end {hi}"));
        }
        if count == 1 && lo != hi {
            return Err("a single-point grid needs lo == hi".to_string());
        }
        let points = (0..count)
            .map(|i| {
                if i + 1 == count {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                }
            })
            .collect();
        Ok(FloatGrid {
            spec: s.to_string(),
            points,
        })
    }
}

/// Integer grid parsed from `lo:hi:step` (inclusive of `hi` when hit).
#[derive(Debug, Clone, PartialEq)]
pub struct IntGrid {
    pub spec: String,
    pub values: Vec<u32>,
}

impl FromStr for IntGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("grid '{s}' must be lo:hi:step"));
        }
        let lo: u32 = parts[0]
            .trim()
            .parse()
            .map_err(|_| format!("bad grid start '{}'", parts[0]))?;
        let hi: u32 = parts[1]
            .trim()
            .parse()
            .map_err(|_| format!("bad grid end '{}'", parts[1]))?;
        let step: u32 = parts[2]
            .trim()
            .parse()
            .map_err(|_| format!("bad grid step '{}'", parts[2]))?;
        if lo == 0 {
            return Err("budget grids start at 1".to_string());
        }
        if step == 0 {
            return Err("grid step must be at least 1".to_string());
        }
        if lo > hi {
            return Err(format!("grid start {lo} exceeds end {hi}"));
        }
        let values = (lo..=hi).step_by(step as usize).collect();
        Ok(IntGrid {
            spec: s.to_string(),
            values,
        })
    }
}

/// Optional `[allocation]` entries of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AllocationOverrides {
    pub n_total: Option<u32>,
    pub n_low: Option<u32>,
    pub n_up: Option<u32>,
    pub alpha: Option<f64>,
    pub algorithm: Option<Algorithm>,
    pub fallback: Option<bool>,
}

/// Optional `[simulation]` entries of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimOverrides {
    pub dataset_size: Option<usize>,
    pub minibatch: Option<usize>,
    pub iterations: Option<u32>,
    pub n_total: Option<u32>,
    pub n_low: Option<u32>,
    pub n_up: Option<u32>,
    pub alpha: Option<f64>,
    pub algorithm: Option<Algorithm>,
    pub policy: Option<Policy>,
    pub eta_sim: Option<f64>,
    pub latent_init: Option<LatentInit>,
    pub unsolvable_fraction: Option<f64>,
    pub seed: Option<u64>,
}

impl SimOverrides {
    /// Overlay the set entries onto a config.
    pub fn apply(&self, cfg: &mut SimConfig) {
        if let Some(v) = self.dataset_size {
            cfg.dataset_size = v;
        }
        if let Some(v) = self.minibatch {
            cfg.minibatch = v;
        }
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.n_total {
            cfg.n_total = v;
        }
        if let Some(v) = self.n_low {
            cfg.n_low = v;
        }
        if let Some(v) = self.n_up {
            cfg.n_up = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.algorithm {
            cfg.algorithm = v;
        }
        if let Some(v) = self.policy {
            cfg.policy = v;
        }
        if let Some(v) = self.eta_sim {
            cfg.eta_sim = v;
        }
        if let Some(v) = self.latent_init {
            cfg.latent_init = v;
        }
        if let Some(v) = self.unsolvable_fraction {
            cfg.unsolvable_fraction = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
    }
}

/// Parsed config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub allocation: AllocationOverrides,
    pub simulation: SimOverrides,
}

enum Section {
    None,
    Allocation,
    Simulation,
}

/// Parse the flat config format: `[section]` headers, `key = value` lines,
/// `#` comments. Later entries for the same key win. Unknown sections and
/// keys are errors, with line numbers.
pub fn parse_config_text(text: &str, source: &str) -> Result<FileConfig> {
    let mut cfg = FileConfig::default();
    let mut section = Section::None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[allocation]" => Section::Allocation,
                "[simulation]" => Section::Simulation,
                other => {
                    return Err(config_err(
                        source,
                        line_no,
                        format!("unknown section {other} (expected [allocation] or [simulation])"),
                    ))
                }
            };
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => {
                return Err(config_err(
                    source,
                    line_no,
                    format!("expected 'key = value', got '{line}'"),
                ))
            }
        };
        match section {
            Section::None => {
                return Err(config_err(
                    source,
                    line_no,
                    format!("key '{key}' appears before any [section] header"),
                ))
            }
            Section::Allocation => match key {
                "n_total" => cfg.allocation.n_total = Some(parse_value(value, source, line_no, key)?),
                "n_low" => cfg.allocation.n_low = Some(parse_value(value, source, line_no, key)?),
                "n_up" => cfg.allocation.n_up = Some(parse_value(value, source, line_no, key)?),
                "alpha" => cfg.allocation.alpha = Some(parse_value(value, source, line_no, key)?),
                "algorithm" => {
                    cfg.allocation.algorithm = Some(parse_value(value, source, line_no, key)?)
                }
                "fallback" => cfg.allocation.fallback = Some(parse_value(value, source, line_no, key)?),
                other => {
                    return Err(config_err(
                        source,
                        line_no,
                        format!("unknown [allocation] key '{other}'"),
                    ))
                }
            },
            Section::Simulation => match key {
                "dataset_size" => {
                    cfg.simulation.dataset_size = Some(parse_value(value, source, line_no, key)?)
                }
                "minibatch" => cfg.simulation.minibatch = Some(parse_value(value, source, line_no, key)?),
                "iterations" => {
                    cfg.simulation.iterations = Some(parse_value(value, source, line_no, key)?)
                }
                "n_total" => cfg.simulation.n_total = Some(parse_value(value, source, line_no, key)?),
                "n_low" => cfg.simulation.n_low = Some(parse_value(value, source, line_no, key)?),
                "n_up" => cfg.simulation.n_up = Some(parse_value(value, source, line_no, key)?),
                "alpha" => cfg.simulation.alpha = Some(parse_value(value, source, line_no, key)?),
                "algorithm" => {
                    cfg.simulation.algorithm = Some(parse_value(value, source, line_no, key)?)
                }
                "policy" => cfg.simulation.policy = Some(parse_value(value, source, line_no, key)?),
                "eta_sim" => cfg.simulation.eta_sim = Some(parse_value(value, source, line_no, key)?),
                "latent_init" => {
                    cfg.simulation.latent_init = Some(parse_value(value, source, line_no, key)?)
                }
                "unsolvable_fraction" => {
                    cfg.simulation.unsolvable_fraction =
                        Some(parse_value(value, source, line_no, key)?)
                }
                "seed" => cfg.simulation.seed = Some(parse_value(value, source, line_no, key)?),
                other => {
                    return Err(config_err(
                        source,
                        line_no,
                        format!("unknown [simulation] key '{other}'"),
                    ))
                }
            },
        }
    }
    Ok(cfg)
}

fn config_err(file: &str, line: usize, msg: String) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg,
    }
}

fn parse_value<T: FromStr>(raw: &str, file: &str, line: usize, key: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| config_err(file, line, format!("bad value for {key}: {e}")))
}

/// A config file together with its raw bytes (for manifest digests).
#[derive(Debug, Clone, Default)]
pub struct LoadedConfig {
    pub file: FileConfig,
    pub source: Option<(PathBuf, Vec<u8>)>,
}

pub fn load_config(path: Option<&Path>) -> Result<LoadedConfig> {
    let Some(path) = path else {
        return Ok(LoadedConfig::default());
    };
    let bytes = std::fs::read(path)?;
    let name = path.display().to_string();
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| config_err(&name, 1, "config file is not valid UTF-8".to_string()))?;
    let file = parse_config_text(text, &name)?;
    Ok(LoadedConfig {
        file,
        source: Some((path.to_path_buf(), bytes)),
    })
}

/// Resolve the allocate command's config: defaults, then the config file,
/// then the flags. `n_total` has no default and must come from one of them.
pub fn resolve_allocation(
    file: &AllocationOverrides,
    flags: &AllocationOverrides,
) -> Result<AllocationConfig> {
    let n_total = flags.n_total.or(file.n_total).ok_or_else(|| {
        Error::Config(
            "n_total must be set via --n-total or an [allocation] n_total entry".to_string(),
        )
    })?;
    let defaults = AllocationConfig::with_budget(n_total);
    Ok(AllocationConfig {
        n_total,
        n_low: flags.n_low.or(file.n_low).unwrap_or(defaults.n_low),
        n_up: flags.n_up.or(file.n_up).unwrap_or(defaults.n_up),
        alpha: flags.alpha.or(file.alpha).unwrap_or(defaults.alpha),
        algorithm: flags
            .algorithm
            .or(file.algorithm)
            .unwrap_or(defaults.algorithm),
        fallback_enabled: flags
            .fallback
            .or(file.fallback)
            .unwrap_or(defaults.fallback_enabled),
    })
}

/// The resolved `[allocation]` section in config-file syntax (round-trips
/// through [`parse_config_text`]).
pub fn format_allocation_config(cfg: &AllocationConfig) -> String {
    format!(
        "[allocation]\nn_total = {}\nn_low = {}\nn_up = {}\nalpha = {}\nalgorithm = {}\nfallback = {}\n",
        cfg.n_total, cfg.n_low, cfg.n_up, cfg.alpha, cfg.algorithm, cfg.fallback_enabled
    )
}

/// The resolved `[simulation]` section in config-file syntax (round-trips
/// through [`parse_config_text`]).
pub fn format_sim_config(cfg: &SimConfig) -> String {
    format!(
        "[simulation]\ndataset_size = {}\nminibatch = {}\niterations = {}\nn_total = {}\n\
         n_low = {}\nn_up = {}\nalpha = {}\nalgorithm = {}\npolicy = {}\neta_sim = {}\n\
         latent_init = {}\nunsolvable_fraction = {}\nseed = {}\n",
        cfg.dataset_size,
        cfg.minibatch,
        cfg.iterations,
        cfg.n_total,
        cfg.n_low,
        cfg.n_up,
        cfg.alpha,
        cfg.algorithm,
        cfg.policy,
        cfg.eta_sim,
        cfg.latent_init,
        cfg.unsolvable_fraction,
        cfg.seed
    )
}

/// Reproducibility record written to `manifest.json` before any other
/// output. Input files and the output directory appear as basenames plus
/// digests, never as absolute paths.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub out_dir: String,
    pub inputs: Vec<InputDigest>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub file: String,
    pub sha256: String,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: Option<u64>, out_dir: &Path, config: serde_json::Value) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            seed,
            out_dir: basename(out_dir),
            inputs: Vec::new(),
            config,
        }
    }

    pub fn add_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            file: basename(path),
            sha256: sha256_hex(bytes),
        });
    }

    /// Write `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&dir.join("manifest.json"), text.as_bytes())
    }
}

fn basename(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| ".".to_string())
}

/// Hex sha256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        write!(hex, "{byte:02x}").expect("writing to a String cannot fail");
    }
    hex
}

/// Write a file via a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path
        .file_name()
        .ok_or_else(|| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name")
        })?
        .to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Parse a plan file: `task_id, budget` per line, `#` comments, unique ids.
pub fn parse_plan_file(path: &Path) -> Result<(BudgetPlan, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let name = path.display().to_string();
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| config_err(&name, 1, "plan file is not valid UTF-8".to_string()))?;
    let mut entries: Vec<(TaskId, u32)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        // Tolerate a `task_id,budget` header row.
        if line_no == 1 && line.replace(' ', "") == "task_id,budget" {
            continue;
        }
        let (id, n) = line.split_once(',').ok_or_else(|| {
            config_err(&name, line_no, format!("expected 'task_id, budget', got '{line}'"))
        })?;
        let id = TaskId::new(id.trim());
        if entries.iter().any(|(existing, _)| *existing == id) {
            return Err(config_err(&name, line_no, format!("duplicate task id '{id}'")));
        }
        let n: u32 = parse_value(n.trim(), &name, line_no, "budget")?;
        entries.push((id, n));
    }
    Ok((BudgetPlan::new(entries, false), bytes))
}

/// Dispatch a parsed command line.
pub fn run_command(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Allocate(args) => cmd_allocate(args),
        Command::Theory(args) => cmd_theory(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Balance(args) => cmd_balance(args),
    }
}

/// `allocate`: load tasks, solve, emit plan + partition trace.
pub fn cmd_allocate(args: &AllocateArgs) -> Result<()> {
    let loaded = load_config(args.config.as_deref())?;
    let flag_overrides = AllocationOverrides {
        n_total: args.n_total,
        n_low: args.n_low,
        n_up: args.n_up,
        alpha: args.alpha,
        algorithm: args.algorithm,
        fallback: if args.no_fallback {
            Some(false)
        } else if args.fallback {
            Some(true)
        } else {
            None
        },
    };
    let cfg = resolve_allocation(&loaded.file.allocation, &flag_overrides)?;
    if args.print_config {
        print!("{}", format_allocation_config(&cfg));
        return Ok(());
    }

    let tasks_path = args
        .tasks
        .as_deref()
        .ok_or_else(|| Error::Config("--tasks is required".to_string()))?;
    let task_bytes = std::fs::read(tasks_path)?;
    let task_name = tasks_path.display().to_string();
    let text = std::str::from_utf8(&task_bytes)
        .map_err(|_| config_err(&task_name, 1, "task file is not valid UTF-8".to_string()))?;
    let records = parse_tasks(text, &task_name)?;
    let tasks: Vec<AllocationTask> = records.iter().map(AllocationTask::from).collect();
    let request = AllocationRequest::new(tasks, cfg)?;
    let trace = if args.brute_force {
        brute_force_allocate(&request)?
    } else {
        allocate(&request)?
    };

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let mut config_value = serde_json::to_value(request.cfg).expect("config serializes");
        config_value["solver"] = serde_json::Value::String(
            if args.brute_force { "brute-force" } else { "dp" }.to_string(),
        );
        let mut manifest = RunManifest::new("allocate", None, out, config_value);
        manifest.add_input(tasks_path, &task_bytes);
        if let Some((path, bytes)) = &loaded.source {
            manifest.add_input(path, bytes);
        }
        manifest.write(out)?;
        write_atomic(&out.join("allocations.jsonl"), allocations_jsonl(&records, &trace).as_bytes())?;
        write_atomic(&out.join("plan.csv"), plan_csv(&trace.plan).as_bytes())?;
    } else {
        print!("{}", plan_table(&trace));
    }
    print_allocate_summary(&request, &trace);
    Ok(())
}

fn allocations_jsonl(records: &[TaskRecord], trace: &AllocationTrace) -> String {
    let mut text = String::new();
    for (i, (id, budget)) in trace.plan.entries.iter().enumerate() {
        let id_json = serde_json::to_string(id.as_str()).expect("string serializes");
        let est = match records[i].est_p {
            Some(p) => fmt_sig10(p),
            None => "null".to_string(),
        };
        text.push_str(&format!(
            "{{\"task_id\":{id_json},\"budget\":{budget},\"partition\":\"{}\",\"est_p\":{est}}}\n",
            trace.partition[i]
        ));
    }
    text
}

fn plan_csv(plan: &BudgetPlan) -> String {
    let mut text = String::from("task_id,budget\n");
    for (id, n) in &plan.entries {
        text.push_str(&format!("{id},{n}\n"));
    }
    text
}

fn plan_table(trace: &AllocationTrace) -> String {
    let mut text = String::from("task_id,budget,partition\n");
    for (i, (id, n)) in trace.plan.entries.iter().enumerate() {
        text.push_str(&format!("{id},{n},{}\n", trace.partition[i]));
    }
    text
}

fn print_allocate_summary(request: &AllocationRequest, trace: &AllocationTrace) {
    let mut counts = [0usize; 4];
    for label in &trace.partition {
        let k = match label {
            PartitionLabel::ZeroRate => 0,
            PartitionLabel::OneRate => 1,
            PartitionLabel::Interior => 2,
            PartitionLabel::Unknown => 3,
        };
        counts[k] += 1;
    }
    println!("tasks = {}", request.tasks.len());
    println!(
        "plan_total = {}{}",
        trace.plan.total,
        if trace.plan.relaxed { " (relaxed)" } else { "" }
    );
    println!("objective = {}", fmt_sig10(trace.objective));
    println!(
        "partition: zero-rate = {}, one-rate = {}, interior = {}, unknown = {}",
        counts[0], counts[1], counts[2], counts[3]
    );
    println!("fallback_pool = {}", trace.fallback_pool);
}

/// Budget-vs-success-rate table: expected draws until a mixed outcome, and
/// the group size that guarantees one with probability `alpha`.
pub fn budget_table_csv(p_grid: &[f64], alpha: f64) -> Result<String> {
    let mut text = String::from("p,expected_first_nonzero,high_prob_budget\n");
    for &p in p_grid {
        let expected = expected_first_nonzero(p)?;
        let budget = high_prob_budget(p, alpha)?;
        text.push_str(&format!("{},{},{budget}\n", fmt_sig10(p), fmt_sig10(expected)));
    }
    Ok(text)
}

/// Value surface: `task_value` over the (p, n) grid.
pub fn value_surface_csv(p_grid: &[f64], n_grid: &[u32], algorithm: Algorithm) -> Result<String> {
    let mut text = String::from("p,n,task_value\n");
    for &p in p_grid {
        for &n in n_grid {
            let value = task_value(algorithm, n, p, None)?;
            text.push_str(&format!("{},{n},{}\n", fmt_sig10(p), fmt_sig10(value)));
        }
    }
    Ok(text)
}

/// Exact vs approximate one-step improvement for a `k`-response softmax with
/// the residual mass spread uniformly off-target.
pub fn infogain_comparison_csv(p_grid: &[f64], k: usize) -> Result<String> {
    let mut text = String::from("p,exact,approx,abs_diff\n");
    for &p in p_grid {
        let exact = info_gain_exact(&SoftmaxState::uniform_residual(k, p)?);
        let approx = info_gain_approx(p);
        text.push_str(&format!(
            "{},{},{},{}\n",
            fmt_sig10(p),
            fmt_sig10(exact),
            fmt_sig10(approx),
            fmt_sig10((exact - approx).abs())
        ));
    }
    Ok(text)
}

/// `theory`: emit the three analysis tables.
pub fn cmd_theory(args: &TheoryArgs) -> Result<()> {
    let loaded = load_config(args.config.as_deref())?;
    let alpha = args.alpha.or(loaded.file.allocation.alpha).unwrap_or(0.9);
    let algorithm = args
        .algorithm
        .or(loaded.file.allocation.algorithm)
        .unwrap_or(Algorithm::Grpo);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if algorithm == Algorithm::ReMax {
        return Err(Error::Config(
            "the theory tables support grpo, rloo, and reinforce; remax needs \
             per-task greedy probabilities"
                .to_string(),
        ));
    }
    let p_grid = match &args.p_grid {
        Some(g) => g.clone(),
        None => "0.01:0.99:99".parse().expect("static grid"),
    };
    let n_grid = match &args.n_grid {
        Some(g) => g.clone(),
        None => "1:64:1".parse().expect("static grid"),
    };
    let softmax_grid = match &args.softmax_grid {
        Some(g) => g.clone(),
        None => "0:1:101".parse().expect("static grid"),
    };
    let softmax_k = args.softmax_k.unwrap_or(100);
    if args.print_config {
        print!(
            "alpha = {alpha}\nalgorithm = {algorithm}\np_grid = {}\nn_grid = {}\n\
             softmax_k = {softmax_k}\nsoftmax_grid = {}\n",
            p_grid.spec, n_grid.spec, softmax_grid.spec
        );
        return Ok(());
    }
    let (first, last) = (p_grid.points[0], *p_grid.points.last().expect("nonempty"));
    if first <= 0.0 || last >= 1.0 {
        return Err(Error::Config(
            "--p-grid must stay strictly inside (0, 1); the budget table \
             diverges at deterministic rates"
                .to_string(),
        ));
    }
    if softmax_k < 2 {
        return Err(Error::Config(
            "--softmax-k must be at least 2 (one target plus one alternative)".to_string(),
        ));
    }

    let tables = [
        ("budget_table.csv", budget_table_csv(&p_grid.points, alpha)?),
        (
            "value_surface.csv",
            value_surface_csv(&p_grid.points, &n_grid.values, algorithm)?,
        ),
        (
            "infogain_comparison.csv",
            infogain_comparison_csv(&softmax_grid.points, softmax_k)?,
        ),
    ];

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let config_value = serde_json::json!({
            "alpha": alpha,
            "algorithm": algorithm.label(),
            "p_grid": p_grid.spec,
            "n_grid": n_grid.spec,
            "softmax_k": softmax_k,
            "softmax_grid": softmax_grid.spec,
        });
        let mut manifest = RunManifest::new("theory", args.seed, out, config_value);
        if let Some((path, bytes)) = &loaded.source {
            manifest.add_input(path, bytes);
        }
        manifest.write(out)?;
        for (name, text) in &tables {
            write_atomic(&out.join(name), text.as_bytes())?;
        }
        println!(
            "wrote {} tables to {}",
            tables.len(),
            out.display()
        );
    } else {
        let mut stdout = std::io::stdout().lock();
        for (name, text) in &tables {
            writeln!(stdout, "# {name}")?;
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

/// One row of the simulate summary.
#[derive(Debug, Clone)]
pub struct PolicySummary {
    pub policy: Policy,
    pub mean_effective_ratio: f64,
    pub final_extremely_hard: u64,
    pub executed_rollouts: u64,
    pub max_budget: u32,
}

impl PolicySummary {
    pub fn from_report(report: &SimReport) -> Self {
        let status = final_status_distribution(report, Binning::Empirical);
        PolicySummary {
            policy: report.config.policy,
            mean_effective_ratio: report.mean_effective_ratio(),
            final_extremely_hard: status.get(StatusCategory::ExtremelyHard),
            executed_rollouts: report.executed_rollouts(),
            max_budget: report
                .allocation_histogram
                .keys()
                .copied()
                .max()
                .unwrap_or(0),
        }
    }
}

pub fn summary_csv(rows: &[PolicySummary]) -> String {
    let mut text =
        String::from("policy,mean_effective_ratio,final_extremely_hard,executed_rollouts,max_budget\n");
    for row in rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            row.policy,
            fmt_sig10(row.mean_effective_ratio),
            row.final_extremely_hard,
            row.executed_rollouts,
            row.max_budget
        ));
    }
    text
}

fn write_sim_outputs(report: &SimReport, dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    manifest.write(dir)?;
    let mut buf = Vec::new();
    write_metrics_csv(&report.metrics, &mut buf)?;
    write_atomic(&dir.join("metrics.csv"), &buf)?;
    let mut buf = Vec::new();
    write_snapshots_jsonl(report, &mut buf)?;
    write_atomic(&dir.join("snapshots.jsonl"), &buf)?;
    let mut buf = Vec::new();
    write_histogram_csv(report, &mut buf)?;
    write_atomic(&dir.join("histogram.csv"), &buf)?;
    // Transitions run from the first trained snapshot to the last; an empty
    // run degenerates to the initial snapshot against itself.
    let last = report.completed_epochs();
    let matrix = transition_matrix(report, last.min(1), last, Binning::Empirical)?;
    let mut buf = Vec::new();
    write_transition_csv(&matrix, &mut buf)?;
    write_atomic(&dir.join("transitions.csv"), &buf)?;
    Ok(())
}

/// `simulate`: run the trainer for one policy, or several with `--compare`.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let loaded = load_config(args.config.as_deref())?;
    let mut cfg = SimConfig::default();
    loaded.file.simulation.apply(&mut cfg);
    let flag_overrides = SimOverrides {
        dataset_size: args.dataset_size,
        minibatch: args.minibatch,
        iterations: args.iterations,
        n_total: args.n_total,
        n_low: args.n_low,
        n_up: args.n_up,
        alpha: args.alpha,
        algorithm: args.algorithm,
        policy: None,
        eta_sim: args.eta_sim,
        latent_init: args.latent_init,
        unsolvable_fraction: args.unsolvable_fraction,
        seed: args.seed,
    };
    flag_overrides.apply(&mut cfg);

    let policies: Vec<Policy> = if args.compare {
        if args.policy.len() < 2 {
            return Err(Error::Config(
                "--compare needs at least two --policy values".to_string(),
            ));
        }
        let mut seen = Vec::new();
        for &p in &args.policy {
            if seen.contains(&p) {
                return Err(Error::Config(format!("duplicate --policy {p}")));
            }
            seen.push(p);
        }
        seen
    } else {
        match args.policy.as_slice() {
            [] => vec![cfg.policy],
            [one] => vec![*one],
            _ => {
                return Err(Error::Config(
                    "multiple --policy values need --compare".to_string(),
                ))
            }
        }
    };

    if args.print_config {
        cfg.policy = policies[0];
        print!("{}", format_sim_config(&cfg));
        return Ok(());
    }

    let mut summaries = Vec::with_capacity(policies.len());
    let mut reports = Vec::with_capacity(policies.len());
    for &policy in &policies {
        let run_cfg = SimConfig {
            policy,
            ..cfg.clone()
        };
        let report = simulator::run(&run_cfg)?;
        summaries.push(PolicySummary::from_report(&report));
        reports.push(report);
    }

    if let Some(out) = &args.out {
        if args.compare {
            std::fs::create_dir_all(out)?;
            let config_value = serde_json::json!({
                "base": serde_json::to_value(&cfg).expect("config serializes"),
                "policies": policies.iter().map(|p| p.label()).collect::<Vec<_>>(),
            });
            let mut manifest = RunManifest::new("simulate", Some(cfg.seed), out, config_value);
            if let Some((path, bytes)) = &loaded.source {
                manifest.add_input(path, bytes);
            }
            manifest.write(out)?;
            for report in &reports {
                let sub = out.join(report.config.policy.label());
                let mut sub_manifest = RunManifest::new(
                    "simulate",
                    Some(report.config.seed),
                    &sub,
                    serde_json::to_value(&report.config).expect("config serializes"),
                );
                if let Some((path, bytes)) = &loaded.source {
                    sub_manifest.add_input(path, bytes);
                }
                write_sim_outputs(report, &sub, &sub_manifest)?;
            }
            write_atomic(&out.join("summary.csv"), summary_csv(&summaries).as_bytes())?;
        } else {
            let report = &reports[0];
            let mut manifest = RunManifest::new(
                "simulate",
                Some(report.config.seed),
                out,
                serde_json::to_value(&report.config).expect("config serializes"),
            );
            if let Some((path, bytes)) = &loaded.source {
                manifest.add_input(path, bytes);
            }
            write_sim_outputs(report, out, &manifest)?;
        }
    }

    print!("{}", summary_csv(&summaries));
    Ok(())
}

/// `balance`: spread a plan over workers and report the makespan.
pub fn cmd_balance(args: &BalanceArgs) -> Result<()> {
    let (plan, plan_bytes) = parse_plan_file(&args.plan)?;
    if plan.entries.is_empty() {
        return Err(Error::NoTasks);
    }
    let seed = args.seed.unwrap_or(0);
    let schedule: WorkerSchedule = match args.strategy {
        Strategy::Random => random_dispatch(&plan, args.workers, seed)?,
        Strategy::Kk => kk_dispatch(&plan, args.workers)?,
    };

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let config_value = serde_json::json!({
            "workers": args.workers,
            "strategy": args.strategy.label(),
            "plan_total": plan.total,
        });
        let seed_field = match args.strategy {
            Strategy::Random => Some(seed),
            Strategy::Kk => None,
        };
        let mut manifest = RunManifest::new("balance", seed_field, out, config_value);
        manifest.add_input(&args.plan, &plan_bytes);
        manifest.write(out)?;
        let mut buf = Vec::new();
        schedule.write_csv(&mut buf)?;
        write_atomic(&out.join("schedule.csv"), &buf)?;
    }

    println!("strategy = {}", args.strategy);
    println!("workers = {}", args.workers);
    println!("makespan = {}", schedule.makespan());
    let loads: Vec<String> = schedule.loads.iter().map(u64::to_string).collect();
    println!("loads = {}", loads.join(","));
    Ok(())
}
