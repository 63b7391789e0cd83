//! Group advantages and gradient-health diagnostics.
//!
//! The quantities here are what the whole allocation story optimizes for:
//! group-relative advantages die when a group's rewards are unanimous, and
//! the effective-gradient ratio measures how much of a batch survived.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numfmt::fmt_sig10;
use crate::types::{categorize_status, StatusCategory, TaskId};

/// Additive stabilizer in the advantage denominator.
pub const ADVANTAGE_EPSILON: f64 = 1e-6;

/// One task's group of binary rewards and the advantages they induce.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupOutcome {
    pub task_id: TaskId,
    pub rewards: Vec<bool>,
    /// Group mean reward.
    pub baseline: f64,
    /// Population standard deviation of the rewards.
    pub sigma: f64,
    /// `(r - baseline) / (sigma + ADVANTAGE_EPSILON)` per rollout.
    pub advantages: Vec<f64>,
    /// True iff the rewards are mixed, i.e. the group moves the policy.
    pub effective: bool,
}

impl GroupOutcome {
    /// Normalize a group of rewards. Errors on an empty group.
    pub fn from_rewards(task_id: TaskId, rewards: Vec<bool>) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::EmptyGroup);
        }
        let n = rewards.len() as f64;
        let successes = rewards.iter().filter(|r| **r).count();
        let baseline = successes as f64 / n;
        let variance = rewards
            .iter()
            .map(|&r| {
                let d = (r as u8) as f64 - baseline;
                d * d
            })
            .sum::<f64>()
            / n;
        let sigma = variance.sqrt();
        let advantages = rewards
            .iter()
            .map(|&r| ((r as u8) as f64 - baseline) / (sigma + ADVANTAGE_EPSILON))
            .collect();
        let effective = successes > 0 && successes < rewards.len();
        Ok(GroupOutcome {
            task_id,
            rewards,
            baseline,
            sigma,
            advantages,
            effective,
        })
    }

    pub fn successes(&self) -> u64 {
        self.rewards.iter().filter(|r| **r).count() as u64
    }

    pub fn trials(&self) -> u64 {
        self.rewards.len() as u64
    }
}

/// Fraction of individual rollouts whose advantage is nonzero, i.e. the
/// size-weighted share of mixed groups. Errors on empty input.
pub fn effective_gradient_ratio(groups: &[GroupOutcome]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let total: u64 = groups.iter().map(GroupOutcome::trials).sum();
    let effective: u64 = groups
        .iter()
        .filter(|g| g.effective)
        .map(GroupOutcome::trials)
        .sum();
    Ok(effective as f64 / total as f64)
}

/// Per-group fractions of dead groups: `(all-success, all-failure)`.
/// Together with the mixed fraction these partition the batch.
pub fn zero_gradient_ratios(groups: &[GroupOutcome]) -> Result<(f64, f64)> {
    if groups.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let m = groups.len() as f64;
    let all_pos = groups
        .iter()
        .filter(|g| g.successes() == g.trials())
        .count() as f64;
    let all_neg = groups.iter().filter(|g| g.successes() == 0).count() as f64;
    Ok((all_pos / m, all_neg / m))
}

/// Counts per difficulty bin, indexed like [`StatusCategory::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StatusCounts(pub [u64; 5]);

impl StatusCounts {
    pub fn get(&self, category: StatusCategory) -> u64 {
        self.0[category.index()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

/// Bin a collection of success rates.
pub fn status_distribution(rates: impl IntoIterator<Item = f64>) -> StatusCounts {
    let mut counts = StatusCounts::default();
    for p in rates {
        counts.0[categorize_status(p).index()] += 1;
    }
    counts
}

/// Gradient-health summary of one training iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub iteration: u32,
    pub effective_ratio: f64,
    /// Fraction of groups that were unanimously successful.
    pub zero_pos: f64,
    /// Fraction of groups that were unanimously failed.
    pub zero_neg: f64,
    pub mixed_groups: u64,
    pub total_groups: u64,
    pub total_samples: u64,
}

impl IterationMetrics {
    pub fn from_groups(iteration: u32, groups: &[GroupOutcome]) -> Result<Self> {
        let effective_ratio = effective_gradient_ratio(groups)?;
        let (zero_pos, zero_neg) = zero_gradient_ratios(groups)?;
        Ok(IterationMetrics {
            iteration,
            effective_ratio,
            zero_pos,
            zero_neg,
            mixed_groups: groups.iter().filter(|g| g.effective).count() as u64,
            total_groups: groups.len() as u64,
            total_samples: groups.iter().map(GroupOutcome::trials).sum(),
        })
    }

    pub fn csv_header() -> &'static str {
        "iteration,effective_ratio,zero_pos,zero_neg,mixed_groups,total_samples"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration,
            fmt_sig10(self.effective_ratio),
            fmt_sig10(self.zero_pos),
            fmt_sig10(self.zero_neg),
            self.mixed_groups,
            self.total_samples
        )
    }
}

/// Write per-iteration metrics as CSV.
pub fn write_metrics_csv(rows: &[IterationMetrics], out: &mut impl Write) -> Result<()> {
    writeln!(out, "{}", IterationMetrics::csv_header())?;
    for row in rows {
        writeln!(out, "{}", row.to_csv_row())?;
    }
    Ok(())
}
