//! Budget allocation: the exact knapsack solver and the fallback pipeline.
//!
//! The core problem: hand out exactly `n_total` rollouts across a batch of
//! tasks, at least `n_low` and at most `n_up` per task, maximizing the summed
//! task value. Because every task's budget comes from a small contiguous
//! range, this is a multiple-choice knapsack and solves exactly by dynamic
//! programming over (tasks processed, budget consumed) — no heuristics, no
//! approximation.
//!
//! Degenerate tasks (estimated rate 0 or 1, or no estimate yet) have zero
//! value under the objective, so the plain solver starves them. The
//! [`allocate`] pipeline handles them explicitly: solved tasks drop to the
//! floor, interior tasks reserve enough budget to see a mixed outcome with
//! high probability, and the remaining budget is spent re-probing tasks that
//! currently look unsolvable.
//!
//! Ties and floating point: among equal-objective allocations, every solver
//! here returns the lexicographically smallest allocation vector in task
//! order. "Equal" means equal as computed: objectives are always accumulated
//! in reverse task order (the fold the DP itself performs), so the solver and
//! the [`brute_force_allocate`] oracle agree bit for bit.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{
    validate_config, AllocationConfig, BudgetPlan, ConfigViolation, TaskId, TaskRecord,
};
use crate::value::{high_prob_budget, task_value};

/// Largest candidate-vector count [`brute_force_allocate`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// One task as the allocator sees it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationTask {
    pub id: TaskId,
    /// Estimated success rate; `None` means no estimate exists yet.
    pub est_p: Option<f64>,
    /// Probability that the greedy response is correct (ReMax scoring only).
    pub greedy_prob: Option<f64>,
}

impl From<&TaskRecord> for AllocationTask {
    fn from(r: &TaskRecord) -> Self {
        AllocationTask {
            id: r.task_id.clone(),
            est_p: r.est_p,
            greedy_prob: r.greedy_prob,
        }
    }
}

/// A batch of tasks plus the config to allocate under.
///
/// The constructor enforces unique task ids and config feasibility for this
/// batch size, so downstream code can assume both.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationRequest {
    pub tasks: Vec<AllocationTask>,
    pub cfg: AllocationConfig,
}

impl AllocationRequest {
    pub fn new(tasks: Vec<AllocationTask>, cfg: AllocationConfig) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::NoTasks);
        }
        let mut ids: Vec<&TaskId> = tasks.iter().map(|t| &t.id).collect();
        ids.sort();
        for pair in ids.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::DuplicateTask(pair[0].clone()));
            }
        }
        validate_config(&cfg, tasks.len()).map_err(Error::Infeasible)?;
        for t in &tasks {
            if let Some(p) = t.est_p {
                assert!(
                    (0.0..=1.0).contains(&p),
                    "task {}: est_p {p} outside [0, 1]",
                    t.id
                );
            }
        }
        Ok(AllocationRequest { tasks, cfg })
    }
}

/// How the pipeline classified each task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionLabel {
    /// Estimated rate exactly 0: currently unsolvable, candidate for re-probing.
    ZeroRate,
    /// Estimated rate exactly 1: solved, gets the floor.
    OneRate,
    /// Interior rate: competes under the knapsack objective.
    Interior,
    /// No estimate yet: treated like a solved task until data arrives.
    Unknown,
}

impl PartitionLabel {
    pub fn label(self) -> &'static str {
        match self {
            PartitionLabel::ZeroRate => "zero-rate",
            PartitionLabel::OneRate => "one-rate",
            PartitionLabel::Interior => "interior",
            PartitionLabel::Unknown => "unknown",
        }
    }

    fn of(task: &AllocationTask) -> Self {
        match task.est_p {
            None => PartitionLabel::Unknown,
            Some(0.0) => PartitionLabel::ZeroRate,
            Some(1.0) => PartitionLabel::OneRate,
            Some(_) => PartitionLabel::Interior,
        }
    }
}

impl std::fmt::Display for PartitionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Full result of an allocation: the plan plus how it was arrived at.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationTrace {
    pub plan: BudgetPlan,
    /// Label per task, aligned with the request's task order.
    pub partition: Vec<PartitionLabel>,
    /// Total budget handed to zero-rate tasks.
    pub fallback_pool: u32,
    /// Achieved objective: summed task value over interior tasks.
    pub objective: f64,
}

/// Exact solver for the bounded, equality-constrained knapsack.
///
/// `values[i][j]` is the value of giving task `i` exactly `lows[i] + j`
/// rollouts. Returns the allocation vector; errors with the violated bound if
/// no vector sums to `total` within the per-task ranges.
///
/// Runs in `O(m * total * max_range)` time and `O(m * total)` space. The
/// suffix-table formulation lets the reconstruction walk forward picking the
/// smallest budget for the earliest task first, which realizes the
/// lexicographic tie-break exactly.
pub fn solve_with_values(
    values: &[Vec<f64>],
    lows: &[u32],
    ups: &[u32],
    total: u32,
) -> Result<Vec<u32>> {
    let m = values.len();
    assert_eq!(m, lows.len());
    assert_eq!(m, ups.len());
    assert!(m > 0, "solver needs at least one task");
    for i in 0..m {
        if lows[i] > ups[i] {
            return Err(Error::Infeasible(ConfigViolation::BoundsInverted {
                n_low: lows[i],
                n_up: ups[i],
            }));
        }
        assert_eq!(values[i].len() as u64, (ups[i] - lows[i] + 1) as u64);
    }
    let floor: u64 = lows.iter().map(|&l| l as u64).sum();
    let capacity: u64 = ups.iter().map(|&u| u as u64).sum();
    if (total as u64) < floor {
        return Err(Error::Infeasible(ConfigViolation::BudgetBelowFloor {
            n_total: total,
            required: floor.min(u32::MAX as u64) as u32,
        }));
    }
    if (total as u64) > capacity {
        return Err(Error::Infeasible(ConfigViolation::BudgetAboveCeiling {
            n_total: total,
            capacity: capacity.min(u32::MAX as u64) as u32,
        }));
    }

    // suffix[i][b]: best value tasks i.. can realize spending exactly b.
    let width = total as usize + 1;
    let mut suffix = vec![f64::NEG_INFINITY; (m + 1) * width];
    suffix[m * width] = 0.0;

    // Tight per-row budget windows: b must be reachable by the suffix and
    // leave the prefix a feasible spend.
    let mut suffix_lo = vec![0u64; m + 1];
    let mut suffix_up = vec![0u64; m + 1];
    for i in (0..m).rev() {
        suffix_lo[i] = suffix_lo[i + 1] + lows[i] as u64;
        suffix_up[i] = suffix_up[i + 1] + ups[i] as u64;
    }
    let mut prefix_lo = 0u64;
    let mut prefix_up = 0u64;
    let mut windows = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let b_min = suffix_lo[i].max((total as u64).saturating_sub(prefix_up));
        let b_max = suffix_up[i].min((total as u64) - prefix_lo.min(total as u64));
        windows.push((b_min.min(total as u64) as usize, b_max as usize));
        if i < m {
            prefix_lo += lows[i] as u64;
            prefix_up += ups[i] as u64;
        }
    }

    for i in (0..m).rev() {
        let (b_min, b_max) = windows[i];
        let (row, rest) = suffix[i * width..].split_at_mut(width);
        let next = &rest[..width];
        for b in b_min..=b_max {
            let hi = ups[i].min(b as u32);
            let mut best = f64::NEG_INFINITY;
            for n in lows[i]..=hi {
                let prev = next[b - n as usize];
                if prev == f64::NEG_INFINITY {
                    continue;
                }
                let cand = values[i][(n - lows[i]) as usize] + prev;
                if cand > best {
                    best = cand;
                }
            }
            row[b] = best;
        }
    }
    debug_assert!(suffix[total as usize] != f64::NEG_INFINITY);

    // Forward reconstruction: for each task take the smallest budget that is
    // still on an optimal path. The comparison is exact because the optimum
    // was computed from these very sums.
    let mut alloc = Vec::with_capacity(m);
    let mut b = total as usize;
    for i in 0..m {
        let target = suffix[i * width + b];
        let hi = ups[i].min(b as u32);
        let mut chosen = None;
        for n in lows[i]..=hi {
            let prev = suffix[(i + 1) * width + (b - n as usize)];
            if prev == f64::NEG_INFINITY {
                continue;
            }
            if values[i][(n - lows[i]) as usize] + prev == target {
                chosen = Some(n);
                break;
            }
        }
        let n = chosen.expect("feasible optimum must be reconstructible");
        alloc.push(n);
        b -= n as usize;
    }
    debug_assert_eq!(b, 0);
    Ok(alloc)
}

/// Per-task value rows plus the per-task lower and upper budget bounds the
/// rows were built against.
type ValueRows = (Vec<Vec<f64>>, Vec<u32>, Vec<u32>);

/// Value rows for every task in the request under uniform bounds
/// `[n_low, min(n_up, n_total)]`. Degenerate and unknown tasks get all-zero
/// rows: the objective cannot see them, only the fallback pipeline can.
fn value_table(req: &AllocationRequest) -> Result<ValueRows> {
    let cfg = &req.cfg;
    let up = cfg.n_up.min(cfg.n_total);
    let range = (up - cfg.n_low + 1) as usize;
    let mut table = Vec::with_capacity(req.tasks.len());
    for t in &req.tasks {
        let row = match PartitionLabel::of(t) {
            PartitionLabel::Interior => {
                let p = t.est_p.expect("interior implies an estimate");
                let mut row = Vec::with_capacity(range);
                for n in cfg.n_low..=up {
                    let v = task_value(cfg.algorithm, n, p, t.greedy_prob).map_err(|e| {
                        match e {
                            Error::MissingGreedyProb(_) => {
                                Error::MissingGreedyProb(t.id.clone())
                            }
                            other => other,
                        }
                    })?;
                    row.push(v);
                }
                row
            }
            _ => vec![0.0; range],
        };
        table.push(row);
    }
    let lows = vec![cfg.n_low; req.tasks.len()];
    let ups = vec![up; req.tasks.len()];
    Ok((table, lows, ups))
}

/// Objective of an allocation: summed task value over interior tasks,
/// accumulated in reverse task order — the same fold the DP performs, so
/// solver and oracle objectives are comparable with `==`.
fn canonical_objective(req: &AllocationRequest, alloc: &[u32]) -> Result<f64> {
    let mut acc = 0.0;
    for (t, &n) in req.tasks.iter().zip(alloc).rev() {
        if PartitionLabel::of(t) == PartitionLabel::Interior {
            let p = t.est_p.expect("interior implies an estimate");
            acc += task_value(req.cfg.algorithm, n, p, t.greedy_prob)?;
        }
    }
    Ok(acc)
}

fn finish_trace(req: &AllocationRequest, alloc: Vec<u32>) -> Result<AllocationTrace> {
    let labels: Vec<PartitionLabel> = req.tasks.iter().map(PartitionLabel::of).collect();
    let objective = canonical_objective(req, &alloc)?;
    let fallback_pool = labels
        .iter()
        .zip(&alloc)
        .filter(|(l, _)| **l == PartitionLabel::ZeroRate)
        .map(|(_, &n)| n)
        .sum();
    let entries = req.tasks.iter().map(|t| t.id.clone()).zip(alloc).collect();
    let plan = BudgetPlan::new(entries, false);
    debug_assert_eq!(plan.total, req.cfg.n_total);
    Ok(AllocationTrace {
        plan,
        partition: labels,
        fallback_pool,
        objective,
    })
}

/// Solve the knapsack objective directly over all tasks in the request,
/// uniform bounds, no fallback handling. Degenerate tasks get the floor
/// unless slack forces budget onto them.
pub fn solve_knapsack(req: &AllocationRequest) -> Result<AllocationTrace> {
    validate_config(&req.cfg, req.tasks.len()).map_err(Error::Infeasible)?;
    let (table, lows, ups) = value_table(req)?;
    let alloc = solve_with_values(&table, &lows, &ups, req.cfg.n_total)?;
    finish_trace(req, alloc)
}

/// Enumeration oracle: tries every feasible allocation vector.
///
/// Uses the exact same value rows, objective fold, and tie-break as
/// [`solve_knapsack`], so on any instance it can finish, the two must agree
/// exactly. Errors if the instance has more than [`BRUTE_FORCE_LIMIT`]
/// candidate vectors.
pub fn brute_force_allocate(req: &AllocationRequest) -> Result<AllocationTrace> {
    validate_config(&req.cfg, req.tasks.len()).map_err(Error::Infeasible)?;
    let (table, lows, ups) = value_table(req)?;
    let total = req.cfg.n_total;

    let count = count_vectors(&lows, &ups, total);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::SearchSpaceTooLarge(count));
    }

    let m = lows.len();
    let mut suffix_lo = vec![0u64; m + 1];
    let mut suffix_up = vec![0u64; m + 1];
    for i in (0..m).rev() {
        suffix_lo[i] = suffix_lo[i + 1] + lows[i] as u64;
        suffix_up[i] = suffix_up[i + 1] + ups[i] as u64;
    }

    let mut current = vec![0u32; m];
    let mut best: Option<(f64, Vec<u32>)> = None;
    // Depth-first in ascending budget order per task: the first optimum found
    // is the lexicographically smallest one, and strict improvement keeps it.
    // The whole search state stays as explicit arguments so the reference
    // enumeration reads top to bottom.
    #[allow(clippy::too_many_arguments)]
    fn descend(
        i: usize,
        remaining: u64,
        table: &[Vec<f64>],
        lows: &[u32],
        ups: &[u32],
        suffix_lo: &[u64],
        suffix_up: &[u64],
        current: &mut Vec<u32>,
        best: &mut Option<(f64, Vec<u32>)>,
    ) {
        if i == table.len() {
            debug_assert_eq!(remaining, 0);
            let mut acc = 0.0;
            for j in (0..table.len()).rev() {
                acc += table[j][(current[j] - lows[j]) as usize];
            }
            match best {
                Some((obj, _)) if acc <= *obj => {}
                _ => *best = Some((acc, current.clone())),
            }
            return;
        }
        for n in lows[i]..=ups[i] {
            let n64 = n as u64;
            if n64 > remaining {
                break;
            }
            let rest = remaining - n64;
            if rest < suffix_lo[i + 1] || rest > suffix_up[i + 1] {
                continue;
            }
            current[i] = n;
            descend(
                i + 1,
                rest,
                table,
                lows,
                ups,
                suffix_lo,
                suffix_up,
                current,
                best,
            );
        }
    }
    descend(
        0,
        total as u64,
        &table,
        &lows,
        &ups,
        &suffix_lo,
        &suffix_up,
        &mut current,
        &mut best,
    );

    let (_, alloc) = best.expect("feasibility was checked by count_vectors");
    finish_trace(req, alloc)
}

/// Number of feasible allocation vectors (saturating).
fn count_vectors(lows: &[u32], ups: &[u32], total: u32) -> u64 {
    let width = total as usize + 1;
    let mut ways = vec![0u64; width];
    ways[0] = 1;
    for i in 0..lows.len() {
        let mut next = vec![0u64; width];
        for b in 0..width {
            if ways[b] == 0 {
                continue;
            }
            let lo = lows[i] as usize;
            let up = ups[i] as usize;
            for n in lo..=up {
                if b + n >= width {
                    break;
                }
                next[b + n] = next[b + n].saturating_add(ways[b]);
            }
        }
        ways = next;
    }
    ways[total as usize]
}

/// Allocate a batch, routing degenerate tasks through the fallback pipeline
/// when the config enables it.
///
/// With fallback on:
///
/// 1. solved (`est_p = 1`) and unknown tasks get the floor `n_low`;
/// 2. interior tasks reserve `high_prob_budget(est_p, alpha)` clamped to the
///    bounds — enough draws to see a mixed outcome with probability `alpha`.
///    If the reserves overshoot the budget they are leveled down to a common
///    cap (never below `n_low`);
/// 3. leftover budget is split evenly across zero-rate tasks (remainder to
///    the lexicographically smallest task ids); with no zero-rate tasks it is
///    spread over the interior tasks by the knapsack solver with the reserves
///    as per-task floors;
/// 4. anything still unplaced (everything at its cap) round-robins over all
///    tasks below `n_up` in task order.
///
/// With fallback off this is [`solve_knapsack`].
pub fn allocate(req: &AllocationRequest) -> Result<AllocationTrace> {
    if req.tasks.is_empty() {
        return Err(Error::NoTasks);
    }
    validate_config(&req.cfg, req.tasks.len()).map_err(Error::Infeasible)?;
    if !req.cfg.fallback_enabled {
        return solve_knapsack(req);
    }

    let cfg = &req.cfg;
    let m = req.tasks.len();
    let labels: Vec<PartitionLabel> = req.tasks.iter().map(PartitionLabel::of).collect();
    let mut alloc = vec![cfg.n_low; m];

    let interior: Vec<usize> = (0..m)
        .filter(|&i| labels[i] == PartitionLabel::Interior)
        .collect();
    let zero: Vec<usize> = (0..m)
        .filter(|&i| labels[i] == PartitionLabel::ZeroRate)
        .collect();

    let others = m - interior.len();
    let avail: u64 = cfg.n_total as u64 - (others as u64) * cfg.n_low as u64;

    let reserves: Vec<u32> = interior
        .iter()
        .map(|&i| {
            let p = req.tasks[i].est_p.expect("interior implies an estimate");
            high_prob_budget(p, cfg.alpha).map(|n| n.clamp(cfg.n_low, cfg.n_up))
        })
        .collect::<Result<_>>()?;
    let reserve_sum: u64 = reserves.iter().map(|&r| r as u64).sum();

    let mut residual: u64 = 0;
    if reserve_sum > avail {
        // Reserves overshoot: level them down to the largest common cap that
        // fits, then spend the last few units on the clipped tasks in order.
        let fits = |cap: u32| -> u64 { reserves.iter().map(|&r| r.min(cap) as u64).sum() };
        let (mut lo, mut hi) = (cfg.n_low, cfg.n_up);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if fits(mid) <= avail {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let cap = lo;
        for (k, &i) in interior.iter().enumerate() {
            alloc[i] = reserves[k].min(cap);
        }
        let mut extra = avail - fits(cap);
        for (k, &i) in interior.iter().enumerate() {
            if extra == 0 {
                break;
            }
            if reserves[k] > cap {
                alloc[i] += 1;
                extra -= 1;
            }
        }
        debug_assert_eq!(extra, 0);
    } else {
        for (k, &i) in interior.iter().enumerate() {
            alloc[i] = reserves[k];
        }
        let leftover = avail - reserve_sum;
        if !zero.is_empty() {
            // Re-probe budget: split evenly over zero-rate tasks, remainder
            // to the smallest task ids, everything clamped at the ceiling.
            let mut by_id: Vec<usize> = zero.clone();
            by_id.sort_by(|&a, &b| req.tasks[a].id.cmp(&req.tasks[b].id));
            let share = leftover / zero.len() as u64;
            let rem = leftover % zero.len() as u64;
            for (rank, &i) in by_id.iter().enumerate() {
                let bump = if (rank as u64) < rem { 1 } else { 0 };
                let want = cfg.n_low as u64 + share + bump;
                let capped = want.min(cfg.n_up as u64) as u32;
                residual += want - capped as u64;
                alloc[i] = capped;
            }
        } else if !interior.is_empty() && leftover > 0 {
            // No zero-rate tasks to re-probe: let the objective place the
            // surplus, with the reserves as per-task floors.
            let capacity: u64 = interior.len() as u64 * cfg.n_up as u64;
            if avail > capacity {
                for &i in &interior {
                    alloc[i] = cfg.n_up;
                }
                residual = avail - capacity;
            } else {
                let mut table = Vec::with_capacity(interior.len());
                let mut lows = Vec::with_capacity(interior.len());
                for (k, &i) in interior.iter().enumerate() {
                    let t = &req.tasks[i];
                    let p = t.est_p.expect("interior implies an estimate");
                    let lo = reserves[k];
                    let mut row = Vec::with_capacity((cfg.n_up - lo + 1) as usize);
                    for n in lo..=cfg.n_up {
                        row.push(task_value(cfg.algorithm, n, p, t.greedy_prob)?);
                    }
                    table.push(row);
                    lows.push(lo);
                }
                let ups = vec![cfg.n_up; interior.len()];
                let sub = solve_with_values(&table, &lows, &ups, avail as u32)?;
                for (k, &i) in interior.iter().enumerate() {
                    alloc[i] = sub[k];
                }
            }
        } else {
            residual = leftover;
        }
    }

    // Final round-robin: spend any residual one unit at a time over tasks
    // still below the ceiling. Terminates because the batch capacity was
    // validated to cover n_total.
    while residual > 0 {
        let mut placed = false;
        for a in alloc.iter_mut() {
            if residual == 0 {
                break;
            }
            if *a < cfg.n_up {
                *a += 1;
                residual -= 1;
                placed = true;
            }
        }
        assert!(placed, "round-robin must make progress");
    }

    finish_trace(req, alloc)
}

/// Give every task the same budget. The baseline the reference setup uses:
/// `n_per_task = n_total / batch`.
pub fn uniform_allocate(tasks: &[AllocationTask], n_per_task: u32) -> BudgetPlan {
    assert!(n_per_task >= 1, "uniform allocation needs a positive budget");
    BudgetPlan::new(
        tasks.iter().map(|t| (t.id.clone(), n_per_task)).collect(),
        false,
    )
}

/// Dynamic-sampling-style baseline: skip tasks whose estimate is exactly 0
/// or 1, give everything else the uniform budget. The skipped budget is not
/// reassigned, so the plan is marked relaxed.
pub fn filter_allocate(tasks: &[AllocationTask], n_per_task: u32) -> BudgetPlan {
    assert!(n_per_task >= 1, "filter allocation needs a positive budget");
    BudgetPlan::new(
        tasks
            .iter()
            .map(|t| {
                let n = match t.est_p {
                    Some(p) if p == 0.0 || p == 1.0 => 0,
                    _ => n_per_task,
                };
                (t.id.clone(), n)
            })
            .collect(),
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Algorithm;

    fn task(id: &str, p: Option<f64>) -> AllocationTask {
        AllocationTask {
            id: TaskId::new(id),
            est_p: p,
            greedy_prob: None,
        }
    }

    fn cfg(n_total: u32, n_low: u32, n_up: u32) -> AllocationConfig {
        AllocationConfig {
            n_total,
            n_low,
            n_up,
            alpha: 0.9,
            algorithm: Algorithm::Grpo,
            fallback_enabled: true,
        }
    }

    #[test]
    fn single_interior_task_takes_the_whole_budget() {
        let req =
            AllocationRequest::new(vec![task("t1", Some(0.5))], cfg(8, 2, 128)).unwrap();
        let trace = solve_knapsack(&req).unwrap();
        assert_eq!(trace.plan.counts(), vec![8]);
        let direct = allocate(&req).unwrap();
        assert_eq!(direct.plan.counts(), vec![8]);
    }

    #[test]
    fn mixed_difficulty_batch_with_fallback() {
        // One unsolvable-looking task, one nearly solved task, six solved.
        let mut tasks = vec![task("t1", Some(0.0)), task("t2", Some(0.9))];
        for i in 3..=8 {
            tasks.push(task(&format!("t{i}"), Some(1.0)));
        }
        let req = AllocationRequest::new(tasks, cfg(64, 2, 128)).unwrap();
        let trace = allocate(&req).unwrap();
        // Solved tasks drop to the floor; the nearly-solved task reserves 22
        // draws (enough for a mixed outcome at alpha = 0.9); the unsolvable
        // task absorbs the rest of the budget for re-probing.
        assert_eq!(trace.plan.counts(), vec![30, 22, 2, 2, 2, 2, 2, 2]);
        assert_eq!(trace.plan.total, 64);
        assert_eq!(trace.fallback_pool, 30);
        assert_eq!(trace.partition[0], PartitionLabel::ZeroRate);
        assert_eq!(trace.partition[1], PartitionLabel::Interior);
        assert_eq!(trace.partition[2], PartitionLabel::OneRate);
    }

    #[test]
    fn mixed_difficulty_batch_without_fallback() {
        let mut tasks = vec![task("t1", Some(0.0)), task("t2", Some(0.9))];
        for i in 3..=8 {
            tasks.push(task(&format!("t{i}"), Some(1.0)));
        }
        let mut c = cfg(64, 2, 128);
        c.fallback_enabled = false;
        let req = AllocationRequest::new(tasks, c).unwrap();
        let trace = allocate(&req).unwrap();
        // Only the interior task has value, so it absorbs everything above
        // the floors; degenerate tasks sit at n_low.
        assert_eq!(trace.plan.counts(), vec![2, 50, 2, 2, 2, 2, 2, 2]);
        assert_eq!(trace.fallback_pool, 2);
    }

    #[test]
    fn all_solved_tasks_get_the_floor() {
        let tasks: Vec<_> = (0..4).map(|i| task(&format!("t{i}"), Some(1.0))).collect();
        let req = AllocationRequest::new(tasks, cfg(8, 2, 128)).unwrap();
        let trace = allocate(&req).unwrap();
        assert_eq!(trace.plan.counts(), vec![2, 2, 2, 2]);
        assert_eq!(trace.objective, 0.0);
    }

    #[test]
    fn all_zero_rate_tasks_split_the_budget_evenly() {
        let tasks: Vec<_> = (0..4).map(|i| task(&format!("t{i}"), Some(0.0))).collect();
        let req = AllocationRequest::new(tasks, cfg(16, 2, 128)).unwrap();
        let trace = allocate(&req).unwrap();
        assert_eq!(trace.plan.counts(), vec![4, 4, 4, 4]);
        assert_eq!(trace.fallback_pool, 16);
    }

    #[test]
    fn zero_rate_remainder_goes_to_smallest_ids() {
        let tasks = vec![
            task("b", Some(0.0)),
            task("a", Some(0.0)),
            task("c", Some(0.0)),
        ];
        let req = AllocationRequest::new(tasks, cfg(11, 2, 128)).unwrap();
        let trace = allocate(&req).unwrap();
        // 11 - 3*2 = 5 leftover: share 1 each, remainder 2 to ids "a", "b".
        assert_eq!(trace.plan.counts(), vec![4, 4, 3]);
    }

    #[test]
    fn unknown_tasks_get_the_floor_under_fallback() {
        let tasks = vec![task("t1", None), task("t2", Some(0.5)), task("t3", None)];
        let req = AllocationRequest::new(tasks, cfg(12, 2, 128)).unwrap();
        let trace = allocate(&req).unwrap();
        assert_eq!(trace.partition[0], PartitionLabel::Unknown);
        // Interior task reserves hpb(0.5, 0.9) = 4; leftover 4 has no
        // zero-rate tasks to go to, so the knapsack pushes it to the
        // interior task.
        assert_eq!(trace.plan.counts(), vec![2, 8, 2]);
    }

    #[test]
    fn overshooting_reserves_are_leveled_down() {
        // Four hard tasks wanting 22 each against a budget of 40.
        let tasks: Vec<_> = (0..4).map(|i| task(&format!("t{i}"), Some(0.9))).collect();
        let req = AllocationRequest::new(tasks, cfg(40, 2, 128)).unwrap();
        let trace = allocate(&req).unwrap();
        assert_eq!(trace.plan.total, 40);
        assert_eq!(trace.plan.counts(), vec![10, 10, 10, 10]);
    }

    #[test]
    fn leveled_reserves_spend_the_last_units_in_task_order() {
        let tasks: Vec<_> = (0..4).map(|i| task(&format!("t{i}"), Some(0.9))).collect();
        let req = AllocationRequest::new(tasks, cfg(42, 2, 128)).unwrap();
        let trace = allocate(&req).unwrap();
        // Cap 10 fits (40), two spare units go to the first two clipped tasks.
        assert_eq!(trace.plan.counts(), vec![11, 11, 10, 10]);
    }

    #[test]
    fn round_robin_tops_up_when_everything_is_capped() {
        let tasks = vec![task("t1", Some(1.0)), task("t2", Some(0.0))];
        let req = AllocationRequest::new(tasks, cfg(12, 2, 6)).unwrap();
        let trace = allocate(&req).unwrap();
        // Zero task takes the leftover up to its cap of 6; the residual then
        // lifts the solved task above the floor — budget must go somewhere.
        assert_eq!(trace.plan.counts(), vec![6, 6]);
        assert_eq!(trace.plan.total, 12);
    }

    #[test]
    fn solver_matches_brute_force_on_a_small_instance() {
        let tasks = vec![
            task("t1", Some(0.1)),
            task("t2", Some(0.33)),
            task("t3", Some(0.9)),
        ];
        let mut c = cfg(12, 1, 6);
        c.fallback_enabled = false;
        let req = AllocationRequest::new(tasks, c).unwrap();
        let fast = solve_knapsack(&req).unwrap();
        let slow = brute_force_allocate(&req).unwrap();
        assert_eq!(fast.plan.counts(), slow.plan.counts());
        assert_eq!(fast.objective, slow.objective);
        assert_eq!(fast.plan.total, 12);
    }

    #[test]
    fn infeasible_bounds_are_reported() {
        let req = AllocationRequest::new(vec![task("t1", Some(0.5))], cfg(8, 2, 128));
        assert!(req.is_ok());
        let err = AllocationRequest::new(
            (0..5).map(|i| task(&format!("t{i}"), Some(0.5))).collect(),
            cfg(8, 2, 128),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::Infeasible(ConfigViolation::BudgetBelowFloor { .. })
        ));
        let err = AllocationRequest::new(vec![task("t1", Some(0.5))], cfg(200, 2, 128))
            .unwrap_err();
        assert!(matches!(
            err,
            Error::Infeasible(ConfigViolation::BudgetAboveCeiling { .. })
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = AllocationRequest::new(
            vec![task("t1", Some(0.5)), task("t1", Some(0.2))],
            cfg(8, 2, 128),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateTask(_)));
    }

    #[test]
    fn brute_force_refuses_oversized_instances() {
        let tasks: Vec<_> = (0..8)
            .map(|i| task(&format!("t{i}"), Some(0.5)))
            .collect();
        let mut c = cfg(512, 2, 128);
        c.fallback_enabled = false;
        let req = AllocationRequest::new(tasks, c).unwrap();
        assert!(matches!(
            brute_force_allocate(&req),
            Err(Error::SearchSpaceTooLarge(_))
        ));
    }

    #[test]
    fn objective_is_monotone_in_the_budget() {
        let tasks = vec![
            task("t1", Some(0.2)),
            task("t2", Some(0.5)),
            task("t3", Some(0.8)),
        ];
        let mut prev = f64::MIN;
        for n_total in 6..=24 {
            let mut c = cfg(n_total, 2, 8);
            c.fallback_enabled = false;
            let req = AllocationRequest::new(tasks.clone(), c).unwrap();
            let obj = solve_knapsack(&req).unwrap().objective;
            assert!(obj >= prev, "n_total = {n_total}: {obj} < {prev}");
            prev = obj;
        }
    }

    #[test]
    fn scaling_all_values_leaves_the_allocation_unchanged() {
        let lows = vec![1, 1, 1];
        let ups = vec![5, 5, 5];
        let base: Vec<Vec<f64>> = vec![
            (1..=5).map(|n| (n as f64).sqrt()).collect(),
            (1..=5).map(|n| (n as f64).ln_1p()).collect(),
            (1..=5).map(|n| 1.0 - 0.5f64.powi(n)).collect(),
        ];
        let alloc = solve_with_values(&base, &lows, &ups, 9).unwrap();
        for scale in [0.001, 3.0, 1e6] {
            let scaled: Vec<Vec<f64>> = base
                .iter()
                .map(|row| row.iter().map(|v| v * scale).collect())
                .collect();
            let alloc2 = solve_with_values(&scaled, &lows, &ups, 9).unwrap();
            assert_eq!(alloc, alloc2, "scale = {scale}");
        }
    }

    #[test]
    fn uniform_and_filter_baselines() {
        let tasks = vec![
            task("t1", Some(0.0)),
            task("t2", Some(0.5)),
            task("t3", Some(1.0)),
            task("t4", None),
        ];
        let uni = uniform_allocate(&tasks, 8);
        assert_eq!(uni.counts(), vec![8, 8, 8, 8]);
        assert_eq!(uni.total, 32);
        assert!(!uni.relaxed);

        let filt = filter_allocate(&tasks, 8);
        assert_eq!(filt.counts(), vec![0, 8, 0, 8]);
        assert_eq!(filt.total, 16);
        assert!(filt.relaxed);
    }

    #[test]
    fn allocation_is_deterministic() {
        let tasks: Vec<_> = (0..6)
            .map(|i| task(&format!("t{i}"), Some(0.1 + 0.15 * i as f64)))
            .collect();
        let req = AllocationRequest::new(tasks, cfg(60, 2, 30)).unwrap();
        let a = allocate(&req).unwrap();
        let b = allocate(&req).unwrap();
        assert_eq!(a, b);
    }
}
