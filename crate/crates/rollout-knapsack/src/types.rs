//! Core domain types: tasks, difficulty bins, allocation configs, budget plans.
//!
//! Everything here is a plain immutable value. Mutation happens by building a
//! new value (the simulator keeps its own working state and only materializes
//! `TaskRecord`s at reporting boundaries).

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a task (an opaque string; uniqueness is enforced where a
/// collection of tasks is assembled, not here).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        TaskId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(s.to_string())
    }
}

/// One task as seen by the allocator and simulator.
///
/// `latent_p` is the ground-truth success probability. It exists only in
/// synthetic settings; live training never knows it. `est_p` is the current
/// frozen estimate (`None` until the first estimate lands). `epoch_history`
/// records `(successes, trials)` per completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: TaskId,
    pub latent_p: Option<f64>,
    pub est_p: Option<f64>,
    #[serde(default)]
    pub epoch_history: Vec<(u64, u64)>,
    pub greedy_prob: Option<f64>,
}

impl TaskRecord {
    /// A record with nothing but an id and an estimated success rate.
    pub fn with_estimate(task_id: impl Into<TaskId>, est_p: Option<f64>) -> Self {
        TaskRecord {
            task_id: task_id.into(),
            latent_p: None,
            est_p,
            epoch_history: Vec::new(),
            greedy_prob: None,
        }
    }

    /// Difficulty bin of the current estimate, if there is one.
    ///
    /// This is deliberately a method, not a field: the status is a pure
    /// function of `est_p` and storing it separately would invite skew.
    pub fn status(&self) -> Option<StatusCategory> {
        self.est_p.map(categorize_status)
    }
}

/// Difficulty bins over estimated success rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatusCategory {
    ExtremelyHard,
    Hard,
    Medium,
    Easy,
    ExtremelyEasy,
}

impl StatusCategory {
    pub const ALL: [StatusCategory; 5] = [
        StatusCategory::ExtremelyHard,
        StatusCategory::Hard,
        StatusCategory::Medium,
        StatusCategory::Easy,
        StatusCategory::ExtremelyEasy,
    ];

    /// Position of this bin in [`StatusCategory::ALL`].
    pub fn index(self) -> usize {
        match self {
            StatusCategory::ExtremelyHard => 0,
            StatusCategory::Hard => 1,
            StatusCategory::Medium => 2,
            StatusCategory::Easy => 3,
            StatusCategory::ExtremelyEasy => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StatusCategory::ExtremelyHard => "extremely-hard",
            StatusCategory::Hard => "hard",
            StatusCategory::Medium => "medium",
            StatusCategory::Easy => "easy",
            StatusCategory::ExtremelyEasy => "extremely-easy",
        }
    }
}

impl fmt::Display for StatusCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Bin a success rate into one of the five difficulty categories.
///
/// The endpoints are their own bins: a task is extremely hard only at exactly
/// `p = 0` and extremely easy only at exactly `p = 1`. The interior splits at
/// 0.2 (inclusive on the hard side) and 0.8 (inclusive on the easy side), so
/// the five bins partition `[0, 1]`.
///
/// Panics if `p` is outside `[0, 1]`; that is a caller bug, not an input
/// condition.
pub fn categorize_status(p: f64) -> StatusCategory {
    assert!(
        (0.0..=1.0).contains(&p),
        "success rate {p} outside [0, 1]"
    );
    if p == 0.0 {
        StatusCategory::ExtremelyHard
    } else if p <= 0.2 {
        StatusCategory::Hard
    } else if p < 0.8 {
        StatusCategory::Medium
    } else if p < 1.0 {
        StatusCategory::Easy
    } else {
        StatusCategory::ExtremelyEasy
    }
}

/// Group-relative algorithm whose gradient structure the value model scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Grpo,
    Rloo,
    Reinforce,
    ReMax,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Grpo => "grpo",
            Algorithm::Rloo => "rloo",
            Algorithm::Reinforce => "reinforce",
            Algorithm::ReMax => "remax",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grpo" => Ok(Algorithm::Grpo),
            "rloo" => Ok(Algorithm::Rloo),
            "reinforce" => Ok(Algorithm::Reinforce),
            "remax" => Ok(Algorithm::ReMax),
            other => Err(format!(
                "unknown algorithm '{other}' (expected grpo, rloo, reinforce, or remax)"
            )),
        }
    }
}

/// Static configuration of one allocation round.
///
/// Feasibility against a concrete batch size is checked by
/// [`validate_config`], not at construction, because the same config is
/// typically reused across batches of different sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationConfig {
    /// Total rollouts to hand out per batch; every exact plan sums to this.
    pub n_total: u32,
    /// Per-task floor. Two is the smallest group that can disagree.
    pub n_low: u32,
    /// Per-task ceiling, bounding memory and keeping one task from
    /// swallowing the batch.
    pub n_up: u32,
    /// Confidence level for the fallback reserves.
    pub alpha: f64,
    /// Algorithm whose gradient structure is being scored.
    pub algorithm: Algorithm,
    /// Whether degenerate tasks are handled by the fallback pipeline or
    /// thrown into the knapsack with zero value.
    pub fallback_enabled: bool,
}

impl AllocationConfig {
    /// Defaults with the given budget: bounds `[2, 128]`, `alpha = 0.9`,
    /// GRPO scoring, fallback on.
    pub fn with_budget(n_total: u32) -> Self {
        AllocationConfig {
            n_total,
            n_low: 2,
            n_up: 128,
            alpha: 0.9,
            algorithm: Algorithm::Grpo,
            fallback_enabled: true,
        }
    }
}

/// First constraint a config/batch pair violates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfigViolation {
    /// `n_total` must be at least 1.
    TotalBudgetZero,
    /// `n_low` must be at least 1.
    LowerBoundZero,
    /// `n_low` must not exceed `n_up`.
    BoundsInverted { n_low: u32, n_up: u32 },
    /// `alpha` must lie strictly between 0 and 1.
    AlphaOutOfRange { alpha: f64 },
    /// The batch needs more budget than `n_total` provides.
    BudgetBelowFloor { n_total: u32, required: u32 },
    /// The batch cannot absorb `n_total` under the per-task ceiling.
    BudgetAboveCeiling { n_total: u32, capacity: u32 },
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigViolation::TotalBudgetZero => write!(f, "n_total must be >= 1"),
            ConfigViolation::LowerBoundZero => write!(f, "n_low must be >= 1"),
            ConfigViolation::BoundsInverted { n_low, n_up } => {
                write!(f, "n_low = {n_low} exceeds n_up = {n_up}")
            }
            ConfigViolation::AlphaOutOfRange { alpha } => {
                write!(f, "alpha = {alpha} is outside (0, 1)")
            }
            ConfigViolation::BudgetBelowFloor { n_total, required } => write!(
                f,
                "n_total = {n_total} is below the batch floor {required} (tasks x n_low)"
            ),
            ConfigViolation::BudgetAboveCeiling { n_total, capacity } => write!(
                f,
                "n_total = {n_total} exceeds the batch capacity {capacity} (tasks x n_up)"
            ),
        }
    }
}

/// Check a config against a batch of `m` tasks.
///
/// Returns the first violated constraint, checking the config-local
/// invariants before batch feasibility.
pub fn validate_config(cfg: &AllocationConfig, m: usize) -> Result<(), ConfigViolation> {
    if cfg.n_total < 1 {
        return Err(ConfigViolation::TotalBudgetZero);
    }
    if cfg.n_low < 1 {
        return Err(ConfigViolation::LowerBoundZero);
    }
    if cfg.n_low > cfg.n_up {
        return Err(ConfigViolation::BoundsInverted {
            n_low: cfg.n_low,
            n_up: cfg.n_up,
        });
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(ConfigViolation::AlphaOutOfRange { alpha: cfg.alpha });
    }
    let m = m as u64;
    let floor = m * cfg.n_low as u64;
    let capacity = m * cfg.n_up as u64;
    if (cfg.n_total as u64) < floor {
        return Err(ConfigViolation::BudgetBelowFloor {
            n_total: cfg.n_total,
            required: floor.min(u32::MAX as u64) as u32,
        });
    }
    if (cfg.n_total as u64) > capacity {
        return Err(ConfigViolation::BudgetAboveCeiling {
            n_total: cfg.n_total,
            capacity: capacity.min(u32::MAX as u64) as u32,
        });
    }
    Ok(())
}

/// Per-task rollout counts produced by an allocator.
///
/// Entries keep the task order of the request that produced the plan, which
/// is what makes "lexicographically smallest among ties" well defined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub entries: Vec<(TaskId, u32)>,
    /// Sum of all allocations.
    pub total: u32,
    /// Baselines that drop tasks (the filter policy) produce plans whose
    /// total may fall short of the configured budget; such plans are marked
    /// relaxed so the conservation invariant knows not to apply.
    pub relaxed: bool,
}

impl BudgetPlan {
    pub fn new(entries: Vec<(TaskId, u32)>, relaxed: bool) -> Self {
        let total = entries.iter().map(|(_, n)| *n as u64).sum::<u64>();
        debug_assert!(total <= u32::MAX as u64);
        BudgetPlan {
            entries,
            total: total as u32,
            relaxed,
        }
    }

    pub fn get(&self, id: &TaskId) -> Option<u32> {
        self.entries.iter().find(|(t, _)| t == id).map(|(_, n)| *n)
    }

    /// Allocation counts in entry order.
    pub fn counts(&self) -> Vec<u32> {
        self.entries.iter().map(|(_, n)| *n).collect()
    }
}

/// Parse a task file.
///
/// One task per line: `task_id, est_p, latent_p, greedy_prob`, where the
/// trailing two fields are optional and `?` (or an empty field) marks an
/// unknown value. `#` starts a comment; blank lines are skipped. Task ids
/// must be unique within the file. Probabilities must lie in `[0, 1]`.
pub fn parse_task_file(path: &Path) -> Result<Vec<TaskRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_tasks(&text, &path.display().to_string())
}

/// Parse task records from text; `source` names the input in errors.
pub fn parse_tasks(text: &str, source: &str) -> Result<Vec<TaskRecord>> {
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
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
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 4 {
            return Err(parse_err(
                source,
                line_no,
                format!("expected 2-4 comma-separated fields, got {}", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(parse_err(source, line_no, "empty task id".to_string()));
        }
        let id = TaskId::new(fields[0]);
        if !seen.insert(id.clone()) {
            return Err(parse_err(
                source,
                line_no,
                format!("duplicate task id '{id}'"),
            ));
        }
        let est_p = parse_opt_prob(fields[1], "est_p", source, line_no)?;
        let latent_p = match fields.get(2) {
            Some(s) => parse_opt_prob(s, "latent_p", source, line_no)?,
            None => None,
        };
        let greedy_prob = match fields.get(3) {
            Some(s) => parse_opt_prob(s, "greedy_prob", source, line_no)?,
            None => None,
        };
        records.push(TaskRecord {
            task_id: id,
            latent_p,
            est_p,
            epoch_history: Vec::new(),
            greedy_prob,
        });
    }
    Ok(records)
}

fn parse_opt_prob(field: &str, name: &str, source: &str, line: usize) -> Result<Option<f64>> {
    if field.is_empty() || field == "?" {
        return Ok(None);
    }
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(source, line, format!("{name}: '{field}' is not a number")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(parse_err(
            source,
            line,
            format!("{name} = {v} is outside [0, 1]"),
        ));
    }
    Ok(Some(v))
}

fn parse_err(source: &str, line: usize, msg: String) -> Error {
    Error::Parse {
        file: source.to_string(),
        line,
        msg,
    }
}
