//! Epoch-frozen success-rate estimation.
//!
//! Training observes rewards continuously, but the allocator must not chase
//! every batch's noise. The estimator therefore pools `(successes, trials)`
//! per task over the current epoch and only publishes new estimates at
//! [`EstimatorState::rollover`]. Between rollovers, [`EstimatorState::estimate`]
//! returns the same frozen value no matter how much data has accumulated —
//! allocation decisions within an epoch are reproducible by construction.
//!
//! A task that was never observed has *no* estimate (`None`), which is a
//! different thing from an estimate of 0.5: the allocator treats unknown
//! tasks conservatively instead of pretending they are coin flips. Tasks with
//! no observations in an epoch carry their previous estimate forward.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::metrics::GroupOutcome;
use crate::numfmt::fmt_sig10;
use crate::types::TaskId;

/// Pooled per-epoch observation state and the frozen estimates it publishes.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    ids: Vec<TaskId>,
    index: HashMap<TaskId, usize>,
    /// Completed epochs, i.e. how many times `rollover` has run.
    epoch: u32,
    acc_successes: Vec<u64>,
    acc_trials: Vec<u64>,
    frozen: Vec<Option<f64>>,
    /// Trials that produced each frozen estimate (0 for carried-forward and
    /// never-observed tasks).
    frozen_trials: Vec<u64>,
}

impl EstimatorState {
    /// Track the given tasks, all starting unknown.
    pub fn new(ids: impl IntoIterator<Item = TaskId>) -> Self {
        let ids: Vec<TaskId> = ids.into_iter().collect();
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let n = ids.len();
        EstimatorState {
            ids,
            index,
            epoch: 0,
            acc_successes: vec![0; n],
            acc_trials: vec![0; n],
            frozen: vec![None; n],
            frozen_trials: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Completed epochs so far.
    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    /// Pool one group outcome into the current epoch's accumulators.
    /// The frozen estimate does not move until the next rollover.
    pub fn record(&mut self, outcome: &GroupOutcome) -> Result<()> {
        self.record_counts(&outcome.task_id, outcome.successes(), outcome.trials())
    }

    /// Pool raw counts; `successes` must not exceed `trials`.
    pub fn record_counts(&mut self, id: &TaskId, successes: u64, trials: u64) -> Result<()> {
        assert!(successes <= trials, "successes exceed trials");
        let i = *self
            .index
            .get(id)
            .ok_or_else(|| Error::UnknownTask(id.clone()))?;
        self.acc_successes[i] += successes;
        self.acc_trials[i] += trials;
        Ok(())
    }

    /// Close the epoch: freeze `successes / trials` for every task that was
    /// observed, carry the previous estimate forward for every task that was
    /// not, and clear the accumulators.
    pub fn rollover(&mut self) {
        for i in 0..self.ids.len() {
            if self.acc_trials[i] > 0 {
                self.frozen[i] = Some(self.acc_successes[i] as f64 / self.acc_trials[i] as f64);
                self.frozen_trials[i] = self.acc_trials[i];
            } else {
                self.frozen_trials[i] = 0;
            }
            self.acc_successes[i] = 0;
            self.acc_trials[i] = 0;
        }
        self.epoch += 1;
    }

    /// Frozen estimate for a task; `None` while the task has never been
    /// observed across any completed epoch.
    pub fn estimate(&self, id: &TaskId) -> Result<Option<f64>> {
        let i = *self
            .index
            .get(id)
            .ok_or_else(|| Error::UnknownTask(id.clone()))?;
        Ok(self.frozen[i])
    }

    /// Index-based accessor for hot loops; panics on a bad index.
    pub fn estimate_at(&self, i: usize) -> Option<f64> {
        self.frozen[i]
    }

    /// Trials accumulated so far in the open epoch (diagnostics/tests).
    pub fn open_epoch_trials(&self, id: &TaskId) -> Result<u64> {
        let i = *self
            .index
            .get(id)
            .ok_or_else(|| Error::UnknownTask(id.clone()))?;
        Ok(self.acc_trials[i])
    }

    /// Sum of all trials recorded in the open epoch.
    pub fn open_epoch_total_trials(&self) -> u64 {
        self.acc_trials.iter().sum()
    }

    /// Snapshot of the frozen state as CSV: `task_id, epoch, frozen_p, trials`.
    /// Unknown estimates are written as `?`.
    pub fn write_snapshot_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "task_id,epoch,frozen_p,trials")?;
        for (i, id) in self.ids.iter().enumerate() {
            let p = match self.frozen[i] {
                Some(p) => fmt_sig10(p),
                None => "?".to_string(),
            };
            writeln!(out, "{},{},{},{}", id, self.epoch, p, self.frozen_trials[i])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> TaskId {
        TaskId::new(s)
    }

    fn state(names: &[&str]) -> EstimatorState {
        EstimatorState::new(names.iter().map(|s| id(s)))
    }

    #[test]
    fn estimates_are_frozen_until_rollover() {
        let mut est = state(&["a", "b"]);
        assert_eq!(est.estimate(&id("a")).unwrap(), None);

        est.record_counts(&id("a"), 3, 8).unwrap();
        // Data is pooled but not published.
        assert_eq!(est.estimate(&id("a")).unwrap(), None);

        est.rollover();
        assert_eq!(est.estimate(&id("a")).unwrap(), Some(0.375));
        assert_eq!(est.epoch(), 1);

        // New observations stay invisible until the next boundary.
        est.record_counts(&id("a"), 8, 8).unwrap();
        assert_eq!(est.estimate(&id("a")).unwrap(), Some(0.375));
        est.rollover();
        assert_eq!(est.estimate(&id("a")).unwrap(), Some(1.0));
    }

    #[test]
    fn observations_pool_within_an_epoch() {
        let mut est = state(&["a"]);
        est.record_counts(&id("a"), 1, 4).unwrap();
        est.record_counts(&id("a"), 2, 4).unwrap();
        est.rollover();
        // 3 successes over 8 trials, not an average of averages.
        assert_eq!(est.estimate(&id("a")).unwrap(), Some(0.375));
    }

    #[test]
    fn unsampled_tasks_carry_their_estimate_forward() {
        let mut est = state(&["a", "b"]);
        est.record_counts(&id("a"), 2, 4).unwrap();
        est.record_counts(&id("b"), 1, 4).unwrap();
        est.rollover();
        est.record_counts(&id("a"), 4, 4).unwrap();
        est.rollover();
        assert_eq!(est.estimate(&id("a")).unwrap(), Some(1.0));
        // b saw no data in epoch 2; its estimate survives.
        assert_eq!(est.estimate(&id("b")).unwrap(), Some(0.25));
        // A task never observed at all stays unknown, which is not 0.5.
        let est2 = state(&["c"]);
        assert_eq!(est2.estimate(&id("c")).unwrap(), None);
    }

    #[test]
    fn unknown_task_ids_are_rejected() {
        let mut est = state(&["a"]);
        assert!(matches!(
            est.record_counts(&id("zz"), 1, 2),
            Err(Error::UnknownTask(_))
        ));
        assert!(matches!(est.estimate(&id("zz")), Err(Error::UnknownTask(_))));
    }

    #[test]
    fn snapshot_csv_shape() {
        let mut est = state(&["a", "b"]);
        est.record_counts(&id("a"), 1, 2).unwrap();
        est.rollover();
        let mut buf = Vec::new();
        est.write_snapshot_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "task_id,epoch,frozen_p,trials");
        assert_eq!(lines[1], "a,1,0.5000000000,2");
        assert_eq!(lines[2], "b,1,?,0");
    }

    #[test]
    fn conservation_of_trials_within_an_epoch() {
        let mut est = state(&["a", "b", "c"]);
        let budgets = [5u64, 9, 2];
        for (k, name) in ["a", "b", "c"].iter().enumerate() {
            est.record_counts(&id(name), 1.min(budgets[k]), budgets[k]).unwrap();
        }
        assert_eq!(est.open_epoch_total_trials(), budgets.iter().sum::<u64>());
        est.rollover();
        assert_eq!(est.open_epoch_total_trials(), 0);
    }
}
