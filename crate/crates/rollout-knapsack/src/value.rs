//! The per-task value model: what is one more rollout worth?
//!
//! A group of `n` rollouts on a task with success rate `p` only produces a
//! gradient when the rewards disagree (or, for REINFORCE-style baselines,
//! when at least one reward is nonzero). The value model combines
//!
//! ```text
//! task_value(n, p) = prob_nonzero_gradient(n, p) * info_gain_approx(p)
//! ```
//!
//! where the first factor is the probability that the group is usable at all
//! and the second approximates how far one successful policy update moves the
//! success probability. Both factors are cheap closed forms, which is what
//! lets the allocator evaluate hundreds of thousands of `(task, n)` pairs per
//! batch.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{Algorithm, TaskId};

/// One-step improvement approximation `p (1 - p)^2`.
///
/// Zero at both endpoints, maximal at `p = 1/3` (value `4/27`), and
/// asymmetric: a hard task at `1/3 - d` is worth more than an easy task at
/// `1/3 + d`, because updates move low-probability tasks further.
///
/// Panics if `p` is outside `[0, 1]`.
pub fn info_gain_approx(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "success rate {p} outside [0, 1]");
    p * (1.0 - p) * (1.0 - p)
}

/// A full softmax distribution over candidate responses, with the index of
/// the correct one. Only needed by [`info_gain_exact`]; the rest of the crate
/// gets by with the scalar success rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoftmaxState {
    probs: Vec<f64>,
    target: usize,
}

impl SoftmaxState {
    /// Validates that the probabilities are nonnegative, sum to 1 within
    /// `1e-9`, and that `target` indexes into them.
    pub fn new(probs: Vec<f64>, target: usize) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no outcomes".to_string()));
        }
        if target >= probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "target index {target} out of range for {} outcomes",
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(Error::InvalidDistribution(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(SoftmaxState { probs, target })
    }

    /// `k`-outcome state with `p` on the target and the remainder spread
    /// uniformly over the other `k - 1` outcomes.
    pub fn uniform_residual(k: usize, p: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidDistribution(
                "uniform residual needs at least two outcomes".to_string(),
            ));
        }
        assert!((0.0..=1.0).contains(&p), "success rate {p} outside [0, 1]");
        let rest = (1.0 - p) / (k - 1) as f64;
        let mut probs = vec![rest; k];
        probs[0] = p;
        SoftmaxState::new(probs, 0)
    }

    pub fn target_prob(&self) -> f64 {
        self.probs[self.target]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Exact first-order change of the target probability after one softmax
/// policy-gradient step with unit learning rate and unit advantage:
///
/// ```text
/// dp_y = p_y (1 - p_y)^2 + p_y * sum_{k != y} p_k^2
/// ```
///
/// The first term is what [`info_gain_approx`] keeps; the sum over the
/// squared off-target probabilities is what it drops. The dropped term is
/// largest when the residual mass is concentrated and vanishes as the
/// response space grows, so the approximation always under-estimates.
pub fn info_gain_exact(state: &SoftmaxState) -> f64 {
    let p_y = state.target_prob();
    let off_target_sq: f64 = state
        .probs
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != state.target)
        .map(|(_, q)| q * q)
        .sum();
    p_y * (1.0 - p_y) * (1.0 - p_y) + p_y * off_target_sq
}

/// Probability that a group of `n` rollouts yields a nonzero gradient.
///
/// * GRPO / RLOO compare rollouts against the group mean, so the gradient
///   survives unless the rewards are unanimous: `1 - p^n - (1-p)^n`.
/// * ReMax subtracts the greedy response's reward, so the group is dead only
///   when every sampled reward matches a greedy hit: `1 - g^n` where `g` is
///   the probability the greedy response is correct.
/// * REINFORCE has no baseline; any success moves the policy: `1 - (1-p)^n`.
///
/// The result is clamped to `[0, 1]` to absorb rounding at the endpoints.
/// Panics if `n == 0` or `p` is outside `[0, 1]`; errors if the algorithm is
/// ReMax and no greedy probability was supplied.
pub fn prob_nonzero_gradient(
    algorithm: Algorithm,
    n: u32,
    p: f64,
    greedy_prob: Option<f64>,
) -> Result<f64> {
    assert!(n >= 1, "group size must be at least 1");
    assert!((0.0..=1.0).contains(&p), "success rate {p} outside [0, 1]");
    let n = n as i32;
    let raw = match algorithm {
        Algorithm::Grpo | Algorithm::Rloo => 1.0 - p.powi(n) - (1.0 - p).powi(n),
        Algorithm::ReMax => {
            let g = greedy_prob.ok_or_else(|| {
                Error::MissingGreedyProb(TaskId::new("<unnamed>"))
            })?;
            assert!(
                (0.0..=1.0).contains(&g),
                "greedy probability {g} outside [0, 1]"
            );
            1.0 - g.powi(n)
        }
        Algorithm::Reinforce => 1.0 - (1.0 - p).powi(n),
    };
    Ok(raw.clamp(0.0, 1.0))
}

/// Expected contribution of giving a task `n` rollouts:
/// `prob_nonzero_gradient * info_gain_approx`.
///
/// Strictly increasing in `n` for interior `p` and identically zero at the
/// endpoints, which is exactly why degenerate tasks need the fallback path
/// rather than the knapsack objective.
pub fn task_value(
    algorithm: Algorithm,
    n: u32,
    p: f64,
    greedy_prob: Option<f64>,
) -> Result<f64> {
    Ok(prob_nonzero_gradient(algorithm, n, p, greedy_prob)? * info_gain_approx(p))
}

/// Expected number of i.i.d. Bernoulli(`p`) draws until both a success and a
/// failure have been seen: `1/p + 1/(1-p) - 1`.
///
/// Undefined at the endpoints — a deterministic task never produces a mixed
/// outcome.
pub fn expected_first_nonzero(p: f64) -> Result<f64> {
    assert!((0.0..=1.0).contains(&p), "success rate {p} outside [0, 1]");
    if p == 0.0 || p == 1.0 {
        return Err(Error::DegenerateRate(p));
    }
    Ok(1.0 / p + 1.0 / (1.0 - p) - 1.0)
}

/// Smallest group size that produces a mixed outcome with probability at
/// least `alpha`: `ceil(ln(1 - alpha) / ln(max(p, 1 - p)))`, floored at 1.
///
/// The dominant failure mode is an unbroken run of the majority outcome,
/// whose probability after `n` draws is `max(p, 1-p)^n`; the bound solves for
/// the `n` that pushes it below `1 - alpha`.
pub fn high_prob_budget(p: f64, alpha: f64) -> Result<u32> {
    assert!((0.0..=1.0).contains(&p), "success rate {p} outside [0, 1]");
    if p == 0.0 || p == 1.0 {
        return Err(Error::DegenerateRate(p));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let majority = p.max(1.0 - p);
    let n = ((1.0 - alpha).ln() / majority.ln()).ceil();
    Ok((n.max(1.0)) as u32)
}

/// One point of the budget-vs-value surface emitted by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetCurvePoint {
    pub p: f64,
    pub n: u32,
    pub value: f64,
}

impl BudgetCurvePoint {
    pub fn new(algorithm: Algorithm, n: u32, p: f64, greedy_prob: Option<f64>) -> Result<Self> {
        Ok(BudgetCurvePoint {
            p,
            n,
            value: task_value(algorithm, n, p, greedy_prob)?,
        })
    }
}
