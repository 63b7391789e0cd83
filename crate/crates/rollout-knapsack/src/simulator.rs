//! Closed-loop synthetic training over a population of Bernoulli tasks.
//!
//! Each task has a latent success probability the trainer never sees. Every
//! iteration samples a minibatch, allocates a rollout budget under the
//! configured policy, draws Bernoulli rewards, and — when a task's group is
//! mixed — nudges its latent rate upward by the same first-order improvement
//! model the allocator's value function uses: `p += eta * p(1-p)^2`, capped
//! at 1. Tasks whose latent rate is exactly 0 never move, which is what makes
//! "spend more budget probing never-solved tasks" a measurable strategy.
//!
//! Budget policies only ever see the estimator's frozen per-epoch success
//! rates, so estimation delay, carry-forward, and the unknown-task cold start
//! all behave as they would against a live trainer.
//!
//! Everything is driven by one seed through separate named ChaCha streams
//! (init / shuffle / rewards), so two runs of the same config are
//! bit-identical and two policies on the same seed face the same initial
//! population and the same epoch orderings.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::allocator::{allocate, filter_allocate, uniform_allocate, AllocationRequest, AllocationTask};
use crate::error::{Error, Result};
use crate::estimator::EstimatorState;
use crate::metrics::{GroupOutcome, IterationMetrics, StatusCounts};
use crate::numfmt::fmt_sig10;
use crate::types::{
    categorize_status, Algorithm, AllocationConfig, StatusCategory, TaskId, TaskRecord,
    validate_config,
};
use crate::value::info_gain_approx;

/// Stream ids carved out of the run seed. Keeping initialization, epoch
/// shuffling, and reward draws on separate streams means changing how much
/// budget a policy spends never perturbs the task population or the batch
/// order it is compared under.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_REWARDS: u64 = 2;

/// Budget allocation policy the simulated trainer runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Every task in the batch gets `n_total / minibatch` rollouts.
    Uniform,
    /// Uniform, but tasks estimated at exactly 0 or 1 are skipped outright;
    /// their budget is forfeited, not reassigned.
    Filter,
    /// Value-maximizing allocation with the degenerate-task fallback.
    Knapsack,
    /// The bare solver: degenerate tasks compete with zero value.
    KnapsackNoFallback,
}

impl Policy {
    pub fn label(self) -> &'static str {
        match self {
            Policy::Uniform => "uniform",
            Policy::Filter => "filter",
            Policy::Knapsack => "knapsack",
            Policy::KnapsackNoFallback => "knapsack-no-fallback",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(Policy::Uniform),
            "filter" => Ok(Policy::Filter),
            "knapsack" => Ok(Policy::Knapsack),
            "knapsack-no-fallback" => Ok(Policy::KnapsackNoFallback),
            other => Err(format!(
                "unknown policy '{other}' (expected uniform, filter, knapsack, or knapsack-no-fallback)"
            )),
        }
    }
}

/// How the non-pinned part of the latent population is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LatentInit {
    /// `Beta(a, b)`; the default `Beta(0.4, 1.6)` skews the population hard.
    Beta { a: f64, b: f64 },
    /// Uniform on `[0, 1)`.
    Uniform,
    /// Every task starts at the same rate.
    Constant(f64),
}

impl LatentInit {
    fn sample(self, rng: &mut impl Rng) -> f64 {
        match self {
            LatentInit::Beta { a, b } => rand_distr::Beta::new(a, b)
                .expect("validated parameters")
                .sample(rng),
            LatentInit::Uniform => rng.gen::<f64>(),
            LatentInit::Constant(p) => p,
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            LatentInit::Beta { a, b } => {
                if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
                    return Err(Error::SimConfig(format!(
                        "beta({a},{b}) needs two positive finite shape parameters"
                    )));
                }
            }
            LatentInit::Uniform => {}
            LatentInit::Constant(p) => {
                if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                    return Err(Error::SimConfig(format!(
                        "constant({p}) needs a rate in [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for LatentInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatentInit::Beta { a, b } => write!(f, "beta({a},{b})"),
            LatentInit::Uniform => f.write_str("uniform"),
            LatentInit::Constant(p) => write!(f, "constant({p})"),
        }
    }
}

impl FromStr for LatentInit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        if s == "uniform" {
            return Ok(LatentInit::Uniform);
        }
        let parse_args = |body: &str| -> Result<Vec<f64>, String> {
            body.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| format!("'{t}' is not a number"))
                })
                .collect()
        };
        if let Some(body) = s.strip_prefix("beta(").and_then(|r| r.strip_suffix(')')) {
            let args = parse_args(body)?;
            if args.len() != 2 {
                return Err(format!("beta takes 2 parameters, got {}", args.len()));
            }
            return Ok(LatentInit::Beta {
                a: args[0],
                b: args[1],
            });
        }
        if let Some(body) = s.strip_prefix("constant(").and_then(|r| r.strip_suffix(')')) {
            let args = parse_args(body)?;
            if args.len() != 1 {
                return Err(format!("constant takes 1 parameter, got {}", args.len()));
            }
            return Ok(LatentInit::Constant(args[0]));
        }
        Err(format!(
            "unknown latent distribution '{s}' (expected uniform, beta(a,b), or constant(p))"
        ))
    }
}

impl From<LatentInit> for String {
    fn from(v: LatentInit) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for LatentInit {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// Full description of one simulated training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of tasks in the dataset.
    pub dataset_size: usize,
    /// Tasks sampled per iteration.
    pub minibatch: usize,
    /// Training iterations to run (0 is allowed and produces empty metrics).
    pub iterations: u32,
    /// Rollout budget per iteration.
    pub n_total: u32,
    /// Per-task floor for the knapsack policies.
    pub n_low: u32,
    /// Per-task ceiling for the knapsack policies.
    pub n_up: u32,
    /// Confidence level for fallback reserves.
    pub alpha: f64,
    /// Scoring algorithm for the knapsack policies.
    pub algorithm: Algorithm,
    pub policy: Policy,
    /// Learning-rate scalar for latent updates; 0 freezes the population.
    pub eta_sim: f64,
    /// Distribution of the solvable tasks' initial latent rates.
    pub latent_init: LatentInit,
    /// Fraction of the dataset pinned at latent rate exactly 0.
    pub unsolvable_fraction: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    /// The reference scenario: 2,000 tasks, batches of 256 with a budget of
    /// 2,048 (8 per task under uniform), 300 iterations.
    fn default() -> Self {
        SimConfig {
            dataset_size: 2000,
            minibatch: 256,
            iterations: 300,
            n_total: 2048,
            n_low: 2,
            n_up: 128,
            alpha: 0.9,
            algorithm: Algorithm::Grpo,
            policy: Policy::Knapsack,
            eta_sim: 0.3,
            latent_init: LatentInit::Beta { a: 0.4, b: 1.6 },
            unsolvable_fraction: 0.15,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// The allocation config the knapsack policies run under.
    pub fn allocation_config(&self) -> AllocationConfig {
        AllocationConfig {
            n_total: self.n_total,
            n_low: self.n_low,
            n_up: self.n_up,
            alpha: self.alpha,
            algorithm: self.algorithm,
            fallback_enabled: self.policy != Policy::KnapsackNoFallback,
        }
    }

    /// Iterations per epoch: one pass over the dataset in shuffled order,
    /// dropping the final partial batch.
    pub fn epoch_len(&self) -> u32 {
        (self.dataset_size / self.minibatch) as u32
    }

    /// Per-task budget of the uniform policy (and of everyone's first epoch).
    pub fn n_per_task(&self) -> u32 {
        self.n_total / self.minibatch as u32
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset_size == 0 {
            return Err(Error::SimConfig("dataset_size must be at least 1".into()));
        }
        if self.minibatch == 0 {
            return Err(Error::SimConfig("minibatch must be at least 1".into()));
        }
        if self.minibatch > self.dataset_size {
            return Err(Error::SimConfig(format!(
                "minibatch {} exceeds dataset_size {}",
                self.minibatch, self.dataset_size
            )));
        }
        if !self.eta_sim.is_finite() || self.eta_sim < 0.0 {
            return Err(Error::SimConfig(format!(
                "eta_sim {} must be finite and non-negative",
                self.eta_sim
            )));
        }
        if !self.unsolvable_fraction.is_finite()
            || !(0.0..=1.0).contains(&self.unsolvable_fraction)
        {
            return Err(Error::SimConfig(format!(
                "unsolvable_fraction {} must lie in [0, 1]",
                self.unsolvable_fraction
            )));
        }
        self.latent_init.validate()?;
        if !(self.n_total as u64).is_multiple_of(self.minibatch as u64) {
            return Err(Error::SimConfig(format!(
                "n_total {} must be divisible by minibatch {} so the first \
                 epoch can allocate uniformly",
                self.n_total, self.minibatch
            )));
        }
        if self.algorithm == Algorithm::ReMax {
            return Err(Error::SimConfig(
                "remax scoring needs per-task greedy-response probabilities, \
                 which the simulator does not model"
                    .into(),
            ));
        }
        validate_config(&self.allocation_config(), self.minibatch).map_err(Error::Infeasible)?;
        Ok(())
    }
}

/// Per-task state at an epoch boundary.
///
/// Snapshot 0 is taken before training; snapshot `k` right after the `k`-th
/// epoch rollover, so `empirical` holds exactly the estimates the next
/// epoch's allocations will see (including carry-forwards).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSnapshot {
    pub epoch: u32,
    /// Frozen success-rate estimates; `None` = never observed so far.
    pub empirical: Vec<Option<f64>>,
    /// Successes recorded during this epoch (all zero in snapshot 0).
    pub successes: Vec<u64>,
    /// Trials recorded during this epoch.
    pub trials: Vec<u64>,
    /// Ground-truth rates at the boundary.
    pub latent: Vec<f64>,
}

/// Which per-task rate feeds the status bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binning {
    /// Frozen empirical estimates; never-observed tasks count as
    /// extremely hard (no recorded success so far).
    Empirical,
    /// Ground-truth latent rates; only meaningful in synthetic runs.
    Latent,
}

impl EpochSnapshot {
    /// Status bin of task `i` under the chosen rate source.
    pub fn status_of(&self, i: usize, binning: Binning) -> StatusCategory {
        match binning {
            Binning::Latent => categorize_status(self.latent[i]),
            Binning::Empirical => self.empirical[i]
                .map(categorize_status)
                .unwrap_or(StatusCategory::ExtremelyHard),
        }
    }
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub config: SimConfig,
    pub task_ids: Vec<TaskId>,
    /// One row per iteration, 1-based.
    pub metrics: Vec<IterationMetrics>,
    /// Snapshot 0 plus one per completed epoch.
    pub snapshots: Vec<EpochSnapshot>,
    /// Budget value → number of (task, iteration) grants at that value.
    /// Filtered-out tasks appear under key 0.
    pub allocation_histogram: BTreeMap<u32, u64>,
    /// Whether each task ever produced a successful rollout.
    pub ever_solved: Vec<bool>,
    pub final_latent: Vec<f64>,
    pub final_estimates: Vec<Option<f64>>,
}

impl SimReport {
    /// Epochs that completed (and produced a snapshot).
    pub fn completed_epochs(&self) -> u32 {
        self.snapshots.last().map(|s| s.epoch).unwrap_or(0)
    }

    /// Rollouts actually executed, summed over iterations.
    pub fn executed_rollouts(&self) -> u64 {
        self.metrics.iter().map(|m| m.total_samples).sum()
    }

    /// Rollouts the per-iteration budget would execute with no filtering.
    pub fn planned_rollouts(&self) -> u64 {
        self.config.iterations as u64 * self.config.n_total as u64
    }

    /// Rollouts accounted for by the histogram (weighted by budget value);
    /// always equals [`SimReport::executed_rollouts`].
    pub fn histogram_rollouts(&self) -> u64 {
        self.allocation_histogram
            .iter()
            .map(|(&b, &c)| b as u64 * c)
            .sum()
    }

    /// Run-mean effective gradient ratio; 0 for an empty run.
    pub fn mean_effective_ratio(&self) -> f64 {
        if self.metrics.is_empty() {
            return 0.0;
        }
        self.metrics.iter().map(|m| m.effective_ratio).sum::<f64>() / self.metrics.len() as f64
    }

    /// Final per-task records: latent truth, last frozen estimate, and the
    /// per-epoch `(successes, trials)` history.
    pub fn final_records(&self) -> Vec<TaskRecord> {
        (0..self.task_ids.len())
            .map(|i| TaskRecord {
                task_id: self.task_ids[i].clone(),
                latent_p: Some(self.final_latent[i]),
                est_p: self.final_estimates[i],
                epoch_history: self
                    .snapshots
                    .iter()
                    .filter(|s| s.epoch > 0)
                    .map(|s| (s.successes[i], s.trials[i]))
                    .collect(),
                greedy_prob: None,
            })
            .collect()
    }
}

/// Draw one group of Bernoulli rewards for a task with a known latent rate.
pub fn sample_rewards(task: &TaskRecord, n: u32, rng: &mut impl Rng) -> Result<GroupOutcome> {
    assert!(n >= 1, "a reward group needs at least one rollout");
    let p = task
        .latent_p
        .ok_or_else(|| Error::MissingLatent(task.task_id.clone()))?;
    draw_group(&task.task_id, p, n, rng)
}

fn draw_group(id: &TaskId, p: f64, n: u32, rng: &mut impl Rng) -> Result<GroupOutcome> {
    let rewards = (0..n).map(|_| rng.gen::<f64>() < p).collect();
    GroupOutcome::from_rewards(id.clone(), rewards)
}

/// One first-order improvement step: `p + eta * p(1-p)^2`, capped at 1.
/// Shares the improvement model with the allocator's value function.
fn bump_latent(p: f64, eta: f64) -> f64 {
    (p + eta * info_gain_approx(p)).min(1.0)
}

/// Apply one gradient update to a task: if the outcome was mixed, the latent
/// rate takes one first-order improvement step; otherwise nothing moves.
/// Exactly one update per task per iteration.
pub fn apply_update(task: &TaskRecord, outcome: &GroupOutcome, eta_sim: f64) -> TaskRecord {
    debug_assert_eq!(task.task_id, outcome.task_id, "outcome belongs to another task");
    let mut updated = task.clone();
    if outcome.effective {
        if let Some(p) = task.latent_p {
            updated.latent_p = Some(bump_latent(p, eta_sim));
        }
    }
    updated
}

/// Run one full simulated training loop. Deterministic in the config.
pub fn run(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let d = cfg.dataset_size;
    let m = cfg.minibatch;
    let epoch_len = cfg.epoch_len();
    let n_per = cfg.n_per_task();
    let alloc_cfg = cfg.allocation_config();

    let width = (d.saturating_sub(1)).to_string().len().max(4);
    let ids: Vec<TaskId> = (0..d)
        .map(|i| TaskId::new(format!("task-{i:0width$}")))
        .collect();

    let mut rng_init = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_init.set_stream(STREAM_INIT);
    let unsolvable = (d as f64 * cfg.unsolvable_fraction).floor() as usize;
    let mut latent: Vec<f64> = (0..d)
        .map(|i| {
            if i < unsolvable {
                0.0
            } else {
                cfg.latent_init.sample(&mut rng_init)
            }
        })
        .collect();

    let mut rng_shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_shuffle.set_stream(STREAM_SHUFFLE);
    let mut rng_rewards = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_rewards.set_stream(STREAM_REWARDS);

    let mut estimator = EstimatorState::new(ids.iter().cloned());
    let mut order: Vec<usize> = (0..d).collect();
    let mut metrics = Vec::with_capacity(cfg.iterations as usize);
    let mut histogram: BTreeMap<u32, u64> = BTreeMap::new();
    let mut ever_solved = vec![false; d];
    let mut epoch_successes = vec![0u64; d];
    let mut epoch_trials = vec![0u64; d];
    let mut snapshots = vec![EpochSnapshot {
        epoch: 0,
        empirical: vec![None; d],
        successes: vec![0; d],
        trials: vec![0; d],
        latent: latent.clone(),
    }];

    let mut pos = 0u32;
    for it in 1..=cfg.iterations {
        if pos == 0 {
            order.shuffle(&mut rng_shuffle);
        }
        let batch = &order[pos as usize * m..(pos as usize + 1) * m];

        let atasks: Vec<AllocationTask> = batch
            .iter()
            .map(|&i| AllocationTask {
                id: ids[i].clone(),
                est_p: estimator.estimate_at(i),
                greedy_prob: None,
            })
            .collect();
        // Until the first rollover there are no estimates to differentiate
        // tasks, so every policy starts uniform.
        let plan = if estimator.epoch() == 0 {
            uniform_allocate(&atasks, n_per)
        } else {
            match cfg.policy {
                Policy::Uniform => uniform_allocate(&atasks, n_per),
                Policy::Filter => filter_allocate(&atasks, n_per),
                Policy::Knapsack | Policy::KnapsackNoFallback => {
                    allocate(&AllocationRequest::new(atasks, alloc_cfg)?)?.plan
                }
            }
        };

        let mut groups: Vec<GroupOutcome> = Vec::with_capacity(m);
        for (&ti, (id, n)) in batch.iter().zip(plan.entries.iter()) {
            *histogram.entry(*n).or_insert(0) += 1;
            if *n == 0 {
                continue;
            }
            let outcome = draw_group(id, latent[ti], *n, &mut rng_rewards)?;
            let successes = outcome.successes();
            if successes > 0 {
                ever_solved[ti] = true;
            }
            epoch_successes[ti] += successes;
            epoch_trials[ti] += outcome.trials();
            estimator.record_counts(id, successes, outcome.trials())?;
            if outcome.effective {
                latent[ti] = bump_latent(latent[ti], cfg.eta_sim);
            }
            groups.push(outcome);
        }

        let row = if groups.is_empty() {
            IterationMetrics {
                iteration: it,
                effective_ratio: 0.0,
                zero_pos: 0.0,
                zero_neg: 0.0,
                mixed_groups: 0,
                total_groups: 0,
                total_samples: 0,
            }
        } else {
            IterationMetrics::from_groups(it, &groups)?
        };
        metrics.push(row);

        pos += 1;
        if pos == epoch_len {
            pos = 0;
            estimator.rollover();
            snapshots.push(EpochSnapshot {
                epoch: estimator.epoch(),
                empirical: (0..d).map(|i| estimator.estimate_at(i)).collect(),
                successes: std::mem::replace(&mut epoch_successes, vec![0; d]),
                trials: std::mem::replace(&mut epoch_trials, vec![0; d]),
                latent: latent.clone(),
            });
        }
    }

    let final_estimates = (0..d).map(|i| estimator.estimate_at(i)).collect();
    Ok(SimReport {
        config: cfg.clone(),
        task_ids: ids,
        metrics,
        snapshots,
        allocation_histogram: histogram,
        ever_solved,
        final_latent: latent,
        final_estimates,
    })
}

/// Count tasks moving between status bins from one snapshot to another.
/// Row = bin at `start_epoch`, column = bin at `end_epoch`; every row sum is
/// that bin's population at the start.
pub fn transition_matrix(
    report: &SimReport,
    start_epoch: u32,
    end_epoch: u32,
    binning: Binning,
) -> Result<[[u64; 5]; 5]> {
    let find = |epoch: u32| {
        report
            .snapshots
            .iter()
            .find(|s| s.epoch == epoch)
            .ok_or(Error::MissingSnapshot(epoch))
    };
    let start = find(start_epoch)?;
    let end = find(end_epoch)?;
    let mut matrix = [[0u64; 5]; 5];
    for i in 0..report.task_ids.len() {
        let from = start.status_of(i, binning).index();
        let to = end.status_of(i, binning).index();
        matrix[from][to] += 1;
    }
    Ok(matrix)
}

/// Status histogram of the last snapshot.
pub fn final_status_distribution(report: &SimReport, binning: Binning) -> StatusCounts {
    let last = report
        .snapshots
        .last()
        .expect("snapshot 0 always exists");
    let mut counts = StatusCounts::default();
    for i in 0..report.task_ids.len() {
        counts.0[last.status_of(i, binning).index()] += 1;
    }
    counts
}

/// Snapshot JSON-lines: a `task_ids` header line, then one line per epoch
/// with `empirical` (`null` = never observed), per-epoch counts, and latent
/// truth, all floats at 10 significant digits.
pub fn write_snapshots_jsonl(report: &SimReport, out: &mut impl Write) -> Result<()> {
    let mut line = String::from("{\"task_ids\":[");
    for (i, id) in report.task_ids.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(
            &serde_json::to_string(id.as_str()).expect("string serialization cannot fail"),
        );
    }
    line.push_str("]}");
    writeln!(out, "{line}")?;

    for snap in &report.snapshots {
        let mut line = format!("{{\"epoch\":{}", snap.epoch);
        line.push_str(",\"empirical\":[");
        for (i, p) in snap.empirical.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            match p {
                Some(p) => line.push_str(&fmt_sig10(*p)),
                None => line.push_str("null"),
            }
        }
        line.push_str("],\"successes\":[");
        for (i, s) in snap.successes.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&s.to_string());
        }
        line.push_str("],\"trials\":[");
        for (i, t) in snap.trials.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&t.to_string());
        }
        line.push_str("],\"latent\":[");
        for (i, p) in snap.latent.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&fmt_sig10(*p));
        }
        line.push_str("]}");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Budget histogram CSV: `budget, count`, ascending by budget.
pub fn write_histogram_csv(report: &SimReport, out: &mut impl Write) -> Result<()> {
    writeln!(out, "budget,count")?;
    for (budget, count) in &report.allocation_histogram {
        writeln!(out, "{budget},{count}")?;
    }
    Ok(())
}

/// 5×5 transition counts as CSV with status labels on both axes.
pub fn write_transition_csv(matrix: &[[u64; 5]; 5], out: &mut impl Write) -> Result<()> {
    let mut header = String::from("from");
    for cat in StatusCategory::ALL {
        header.push(',');
        header.push_str(cat.label());
    }
    writeln!(out, "{header}")?;
    for (r, row) in matrix.iter().enumerate() {
        let mut line = String::from(StatusCategory::ALL[r].label());
        for v in row {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 8 tasks, batches of 4, 16 rollouts per iteration (4 per task
    /// uniformly), epochs of 2 iterations.
    fn tiny_cfg() -> SimConfig {
        SimConfig {
            dataset_size: 8,
            minibatch: 4,
            iterations: 6,
            n_total: 16,
            n_low: 2,
            n_up: 8,
            alpha: 0.9,
            algorithm: Algorithm::Grpo,
            policy: Policy::Knapsack,
            eta_sim: 0.5,
            latent_init: LatentInit::Constant(0.5),
            unsolvable_fraction: 0.25,
            seed: 7,
        }
    }

    #[test]
    fn latent_init_strings_round_trip() {
        for (text, init) in [
            ("uniform", LatentInit::Uniform),
            ("beta(0.4,1.6)", LatentInit::Beta { a: 0.4, b: 1.6 }),
            ("constant(0.5)", LatentInit::Constant(0.5)),
        ] {
            assert_eq!(text.parse::<LatentInit>().unwrap(), init);
            assert_eq!(init.to_string().parse::<LatentInit>().unwrap(), init);
        }
        assert!("beta(0.4)".parse::<LatentInit>().is_err());
        assert!("gamma(1,2)".parse::<LatentInit>().is_err());
        assert!("constant(1.5)"
            .parse::<LatentInit>()
            .unwrap()
            .validate()
            .is_err());
    }

    #[test]
    fn policy_strings_round_trip() {
        for p in [
            Policy::Uniform,
            Policy::Filter,
            Policy::Knapsack,
            Policy::KnapsackNoFallback,
        ] {
            assert_eq!(p.label().parse::<Policy>().unwrap(), p);
        }
        assert!("greedy".parse::<Policy>().is_err());
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let mut cfg = tiny_cfg();
        cfg.minibatch = 9;
        assert!(matches!(cfg.validate(), Err(Error::SimConfig(_))));

        let mut cfg = tiny_cfg();
        cfg.n_total = 17;
        assert!(matches!(cfg.validate(), Err(Error::SimConfig(_))));

        let mut cfg = tiny_cfg();
        cfg.eta_sim = -0.1;
        assert!(matches!(cfg.validate(), Err(Error::SimConfig(_))));

        let mut cfg = tiny_cfg();
        cfg.algorithm = Algorithm::ReMax;
        assert!(matches!(cfg.validate(), Err(Error::SimConfig(_))));

        let mut cfg = tiny_cfg();
        cfg.n_total = 200; // above 8 * n_up
        assert!(matches!(cfg.validate(), Err(Error::Infeasible(_))));
    }

    #[test]
    fn update_examples() {
        let task = TaskRecord {
            task_id: TaskId::new("t"),
            latent_p: Some(0.5),
            est_p: None,
            epoch_history: Vec::new(),
            greedy_prob: None,
        };
        let mixed = GroupOutcome::from_rewards(TaskId::new("t"), vec![true, false]).unwrap();
        let unanimous = GroupOutcome::from_rewards(TaskId::new("t"), vec![true, true]).unwrap();
        assert_eq!(apply_update(&task, &mixed, 1.0).latent_p, Some(0.625));
        assert_eq!(apply_update(&task, &unanimous, 1.0).latent_p, Some(0.5));

        let stuck = TaskRecord {
            latent_p: Some(0.0),
            ..task.clone()
        };
        assert_eq!(apply_update(&stuck, &mixed, 1.0).latent_p, Some(0.0));
    }

    #[test]
    fn update_caps_at_one() {
        // eta large enough to overshoot: 0.9 + 20 * 0.9 * 0.01 = 1.08.
        assert_eq!(bump_latent(0.9, 20.0), 1.0);
    }

    #[test]
    fn reward_sampling_respects_latent_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let solved = TaskRecord {
            task_id: TaskId::new("s"),
            latent_p: Some(1.0),
            est_p: None,
            epoch_history: Vec::new(),
            greedy_prob: None,
        };
        let out = sample_rewards(&solved, 16, &mut rng).unwrap();
        assert_eq!(out.successes(), 16);
        assert!(!out.effective);

        let hopeless = TaskRecord {
            latent_p: Some(0.0),
            ..solved.clone()
        };
        let out = sample_rewards(&hopeless, 16, &mut rng).unwrap();
        assert_eq!(out.successes(), 0);
        assert!(!out.effective);

        let blank = TaskRecord {
            latent_p: None,
            ..solved
        };
        assert!(matches!(
            sample_rewards(&blank, 4, &mut rng),
            Err(Error::MissingLatent(_))
        ));
    }

    #[test]
    fn reward_sampling_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let task = TaskRecord {
            task_id: TaskId::new("t"),
            latent_p: Some(0.5),
            est_p: None,
            epoch_history: Vec::new(),
            greedy_prob: None,
        };
        let out = sample_rewards(&task, 100_000, &mut rng).unwrap();
        let frac = out.successes() as f64 / out.trials() as f64;
        assert!((frac - 0.5).abs() < 0.005, "success fraction {frac}");
    }

    #[test]
    fn runs_are_deterministic_and_seed_sensitive() {
        let cfg = tiny_cfg();
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);

        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_snapshots_jsonl(&a, &mut buf_a).unwrap();
        write_snapshots_jsonl(&b, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);

        let other = run(&SimConfig {
            seed: 8,
            ..cfg
        })
        .unwrap();
        assert_ne!(a.metrics, other.metrics);
    }

    #[test]
    fn degenerate_population_has_no_signal_and_latents_never_move() {
        // Half the tasks pinned at 0, the rest constant 1: every group is
        // unanimous, so nothing is effective and nothing updates.
        let cfg = SimConfig {
            latent_init: LatentInit::Constant(1.0),
            unsolvable_fraction: 0.5,
            policy: Policy::Uniform,
            ..tiny_cfg()
        };
        let report = run(&cfg).unwrap();
        for row in &report.metrics {
            assert_eq!(row.effective_ratio, 0.0);
            assert_eq!(row.mixed_groups, 0);
        }
        assert_eq!(report.final_latent, report.snapshots[0].latent);
        // Three full epochs cover every task, so ever_solved is exactly the
        // latent-1 half.
        for (i, &solved) in report.ever_solved.iter().enumerate() {
            assert_eq!(solved, i >= 4, "task {i}");
        }
    }

    #[test]
    fn latents_are_monotone_and_bounded() {
        let cfg = SimConfig {
            iterations: 12,
            latent_init: LatentInit::Beta { a: 0.4, b: 1.6 },
            ..tiny_cfg()
        };
        let report = run(&cfg).unwrap();
        for pair in report.snapshots.windows(2) {
            for i in 0..cfg.dataset_size {
                assert!(pair[1].latent[i] >= pair[0].latent[i]);
                assert!((0.0..=1.0).contains(&pair[1].latent[i]));
            }
        }
        // Pinned tasks never move and are never solved.
        for i in 0..2 {
            assert_eq!(report.final_latent[i], 0.0);
            assert!(!report.ever_solved[i]);
        }
    }

    #[test]
    fn frozen_population_gives_diagonal_latent_transitions() {
        let cfg = SimConfig {
            eta_sim: 0.0,
            iterations: 8,
            ..tiny_cfg()
        };
        let report = run(&cfg).unwrap();
        let last = report.completed_epochs();
        assert!(last >= 2);
        let matrix = transition_matrix(&report, 0, last, Binning::Latent).unwrap();
        let mut total = 0;
        for (r, row) in matrix.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if r != c {
                    assert_eq!(v, 0, "off-diagonal flow {r}->{c}");
                }
                total += v;
            }
        }
        assert_eq!(total, cfg.dataset_size as u64);
        assert!(matches!(
            transition_matrix(&report, 0, 99, Binning::Latent),
            Err(Error::MissingSnapshot(99))
        ));
    }

    #[test]
    fn transition_rows_sum_to_start_bins() {
        let cfg = SimConfig {
            iterations: 10,
            ..tiny_cfg()
        };
        let report = run(&cfg).unwrap();
        let last = report.completed_epochs();
        for binning in [Binning::Empirical, Binning::Latent] {
            let matrix = transition_matrix(&report, 1, last, binning).unwrap();
            let start = &report.snapshots[1];
            for (r, row) in matrix.iter().enumerate() {
                let bin_pop = (0..cfg.dataset_size)
                    .filter(|&i| start.status_of(i, binning).index() == r)
                    .count() as u64;
                assert_eq!(row.iter().sum::<u64>(), bin_pop);
            }
        }
    }

    #[test]
    fn budgets_are_conserved() {
        for policy in [Policy::Uniform, Policy::Knapsack, Policy::KnapsackNoFallback] {
            let cfg = SimConfig {
                policy,
                ..tiny_cfg()
            };
            let report = run(&cfg).unwrap();
            for row in &report.metrics {
                assert_eq!(row.total_samples, cfg.n_total as u64, "{policy}");
            }
            assert_eq!(report.histogram_rollouts(), report.planned_rollouts());
            let entries: u64 = report.allocation_histogram.values().sum();
            assert_eq!(entries, cfg.iterations as u64 * cfg.minibatch as u64);
        }
    }

    #[test]
    fn filter_policy_records_its_shortfall() {
        // Everything latent-degenerate: after the first rollover every
        // estimate is 0 or 1, so the filter drops the entire batch.
        let cfg = SimConfig {
            latent_init: LatentInit::Constant(1.0),
            unsolvable_fraction: 0.5,
            policy: Policy::Filter,
            iterations: 6,
            ..tiny_cfg()
        };
        let report = run(&cfg).unwrap();
        let epoch_len = cfg.epoch_len() as usize;
        for (k, row) in report.metrics.iter().enumerate() {
            if k < epoch_len {
                assert_eq!(row.total_samples, cfg.n_total as u64);
            } else {
                assert_eq!(row.total_samples, 0, "iteration {}", k + 1);
                assert_eq!(row.effective_ratio, 0.0);
            }
        }
        assert_eq!(report.histogram_rollouts(), report.executed_rollouts());
        assert!(report.executed_rollouts() < report.planned_rollouts());
        assert_eq!(report.allocation_histogram[&0], 16);
    }

    #[test]
    fn first_epoch_is_uniform_for_every_policy() {
        let epoch_len = tiny_cfg().epoch_len();
        let mut first_epoch_metrics = Vec::new();
        for policy in [
            Policy::Uniform,
            Policy::Filter,
            Policy::Knapsack,
            Policy::KnapsackNoFallback,
        ] {
            let cfg = SimConfig {
                policy,
                iterations: epoch_len,
                ..tiny_cfg()
            };
            let report = run(&cfg).unwrap();
            assert_eq!(
                report.allocation_histogram.keys().copied().collect::<Vec<_>>(),
                vec![cfg.n_per_task()],
                "{policy}"
            );
            first_epoch_metrics.push(report.metrics);
        }
        // Same seed, same batches, same uniform budgets: identical outcomes.
        for other in &first_epoch_metrics[1..] {
            assert_eq!(&first_epoch_metrics[0], other);
        }
    }

    #[test]
    fn zero_iterations_is_a_valid_run() {
        let cfg = SimConfig {
            iterations: 0,
            ..tiny_cfg()
        };
        let report = run(&cfg).unwrap();
        assert!(report.metrics.is_empty());
        assert_eq!(report.snapshots.len(), 1);
        assert_eq!(report.completed_epochs(), 0);
        assert_eq!(report.mean_effective_ratio(), 0.0);
    }

    #[test]
    fn final_records_carry_history_and_estimates() {
        let cfg = tiny_cfg();
        let report = run(&cfg).unwrap();
        let records = report.final_records();
        assert_eq!(records.len(), cfg.dataset_size);
        let epochs = report.completed_epochs() as usize;
        for (i, rec) in records.iter().enumerate() {
            assert_eq!(rec.epoch_history.len(), epochs);
            assert_eq!(rec.est_p, report.final_estimates[i]);
            assert_eq!(rec.latent_p, Some(report.final_latent[i]));
        }
        // Per-epoch trials recorded in history sum to what was executed.
        let history_trials: u64 = records
            .iter()
            .flat_map(|r| r.epoch_history.iter().map(|&(_, t)| t))
            .sum();
        let full_epoch_samples: u64 = report
            .metrics
            .iter()
            .take(epochs * cfg.epoch_len() as usize)
            .map(|m| m.total_samples)
            .sum();
        assert_eq!(history_trials, full_epoch_samples);
    }

    #[test]
    fn snapshot_serialization_is_stable() {
        let cfg = SimConfig {
            dataset_size: 3,
            minibatch: 3,
            iterations: 1,
            n_total: 6,
            n_low: 2,
            n_up: 4,
            latent_init: LatentInit::Constant(1.0),
            unsolvable_fraction: 0.34,
            ..tiny_cfg()
        };
        let report = run(&cfg).unwrap();
        let mut buf = Vec::new();
        write_snapshots_jsonl(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "{\"task_ids\":[\"task-0000\",\"task-0001\",\"task-0002\"]}"
        );
        assert_eq!(
            lines.next().unwrap(),
            "{\"epoch\":0,\"empirical\":[null,null,null],\"successes\":[0,0,0],\
             \"trials\":[0,0,0],\"latent\":[0,1.000000000,1.000000000]}"
        );
        // One epoch completed: task 0 went 0/2, the others 2/2.
        assert_eq!(
            lines.next().unwrap(),
            "{\"epoch\":1,\"empirical\":[0,1.000000000,1.000000000],\
             \"successes\":[0,2,2],\"trials\":[2,2,2],\"latent\":[0,1.000000000,1.000000000]}"
        );
        assert!(lines.next().is_none());
    }

    #[test]
    fn histogram_and_transition_csv_shapes() {
        let cfg = tiny_cfg();
        let report = run(&cfg).unwrap();
        let mut buf = Vec::new();
        write_histogram_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("budget,count\n"));

        let matrix = transition_matrix(&report, 0, 1, Binning::Empirical).unwrap();
        let mut buf = Vec::new();
        write_transition_csv(&matrix, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(
            lines[0],
            "from,extremely-hard,hard,medium,easy,extremely-easy"
        );
        assert!(lines[1].starts_with("extremely-hard,"));
        // Row sums cover the whole dataset.
        let total: u64 = matrix.iter().flatten().sum();
        assert_eq!(total, cfg.dataset_size as u64);
    }
}
