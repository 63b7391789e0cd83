//! Exploration-budget allocation for group-relative policy-gradient training.
//!
//! Group-relative methods (GRPO and friends) normalize rewards within a group
//! of rollouts sampled from the same task. When every rollout in a group gets
//! the same reward, the normalized advantages are all zero and the whole group
//! contributes nothing to the gradient. This crate treats the per-task rollout
//! count as a resource-allocation problem: estimate how likely each task is to
//! produce a mixed (non-degenerate) group, score how much a mixed group is
//! worth, and solve an exact integer knapsack so that a fixed sampling budget
//! goes where it buys the most learning signal.
//!
//! The pieces, bottom to top:
//!
//! * [`types`] — task records, difficulty bins, allocation config, budget plans.
//! * [`value`] — the per-task value model: probability that a group produces a
//!   usable gradient, expected improvement from one update, and the budget
//!   needed to see a mixed outcome with high probability.
//! * [`metrics`] — group advantages and effective-gradient diagnostics.
//! * [`allocator`] — the exact bounded-knapsack solver, a brute-force oracle,
//!   the fallback pipeline for degenerate tasks, and the baseline allocators.
//! * [`estimator`] — epoch-frozen success-rate tracking.
//! * [`balancer`] — spreading a plan's rollouts across workers.
//! * [`simulator`] — a synthetic Bernoulli-task training loop for comparing
//!   allocation policies end to end.
//! * [`cli`] — the `rollout-knapsack` command-line tool built on all of the
//!   above.
//!
//! Everything that consumes randomness takes an explicit seed and is
//! deterministic: identical inputs produce byte-identical outputs.

pub mod allocator;
pub mod balancer;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod metrics;
pub mod numfmt;
pub mod simulator;
pub mod types;
pub mod value;

pub use error::{Error, Result};
