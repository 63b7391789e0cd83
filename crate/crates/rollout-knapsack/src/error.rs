//! Crate-wide error type.
//!
//! Contract violations that indicate a bug in the caller (probabilities
//! outside `[0, 1]`, zero-length groups where the signature promises
//! otherwise) panic via `assert!`; everything a well-behaved caller can
//! trigger with plain bad data comes back as an [`Error`].

use crate::types::{ConfigViolation, TaskId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An allocation request or simulation was asked to run over zero tasks.
    #[error("no tasks provided")]
    NoTasks,

    /// The allocation config cannot be satisfied for this batch.
    #[error("infeasible allocation: {0}")]
    Infeasible(ConfigViolation),

    /// A quantity such as the expected draws until a mixed outcome is
    /// undefined when the success rate is exactly 0 or 1.
    #[error("undefined for degenerate success rate p = {0}")]
    DegenerateRate(f64),

    /// Confidence levels must lie strictly between 0 and 1.
    #[error("confidence level alpha = {0} is outside (0, 1)")]
    AlphaOutOfRange(f64),

    /// ReMax-style scoring needs the greedy-response probability per task.
    #[error("task {0} has no greedy-response probability but the algorithm needs one")]
    MissingGreedyProb(TaskId),

    /// Softmax states must be nonnegative and sum to 1.
    #[error("invalid softmax distribution: {0}")]
    InvalidDistribution(String),

    /// A reward group was empty.
    #[error("reward group is empty")]
    EmptyGroup,

    /// An outcome referenced a task the estimator was never told about.
    #[error("unknown task id {0}")]
    UnknownTask(TaskId),

    /// A batch contained the same task id twice.
    #[error("duplicate task id {0}")]
    DuplicateTask(TaskId),

    /// Dispatch needs at least one worker.
    #[error("worker count must be at least 1")]
    NoWorkers,

    /// Partitioning needs at least one group.
    #[error("partition needs at least one group, got {0}")]
    TooFewGroups(usize),

    /// The enumeration oracle refuses instances it cannot finish.
    #[error("brute-force search space has {0} candidate vectors (limit {limit})", limit = crate::allocator::BRUTE_FORCE_LIMIT)]
    SearchSpaceTooLarge(u64),

    /// Sampling rewards requires the task's latent success probability.
    #[error("task {0} has no latent success probability")]
    MissingLatent(TaskId),

    /// A transition matrix was requested for epochs that never completed.
    #[error("no snapshot recorded for epoch {0}")]
    MissingSnapshot(u32),

    /// A simulation config failed validation.
    #[error("invalid simulation config: {0}")]
    SimConfig(String),

    /// A CLI invocation resolved to an unusable configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A task file, plan file, or config file could not be parsed.
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for usage and parse problems,
    /// 3 for infeasible instances.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) => 3,
            _ => 2,
        }
    }
}
