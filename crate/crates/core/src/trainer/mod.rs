//! The end-to-end training loop and its experiment harnesses.
//!
//! This module turns the building blocks from [`crate::depo`],
//! [`crate::adversarial`], and [`crate::envs`] into complete runs:
//!
//! - [`ReplayBuffer`]: FIFO transition store with uniform
//!   without-replacement minibatch sampling ([`buffer`]);
//! - [`ExperimentConfig`]: the declarative run description parsed from
//!   TOML, with fail-fast validation and defaulted hyperparameters
//!   ([`config`]);
//! - [`QFunction`] / [`SoftQLearner`]: entropy-regularized temporal-
//!   difference learning with a softly-mixed target network, exact
//!   expected backups in tabular mode and twin-minimum networks in
//!   continuous mode ([`soft_q`]);
//! - actor improvement steps for the monolithic baseline policy and for
//!   the composed decoupled policy trained end-to-end ([`actor`]);
//! - [`MetricsLog`]: the deterministic per-evaluation-point table every
//!   run emits, plus per-component update counters ([`metrics`]);
//! - the runners: a single-agent run, planner-frozen transfer, shared-
//!   planner co-training, and the environment-reward mode that drops the
//!   discriminator ([`runner`]).
//!
//! Every run is a pure function of its configuration and seed: one
//! sequential random stream drives construction, exploration, sampling,
//! and evaluation, so identical inputs produce byte-identical metric
//! tables.

pub mod actor;
pub mod buffer;
pub mod config;
pub mod metrics;
pub mod runner;
pub mod soft_q;

pub use buffer::ReplayBuffer;
pub use config::{
    config_hash, AlgorithmVariant, EnvConfig, EnvName, ExperimentConfig, HiddenSizes,
    LearningRates, RewardSource, TransformName,
};
pub use metrics::{MetricsLog, MetricsRow, UpdateCounters, METRICS_COLUMNS};
pub use runner::{
    aggregate_planner_gradients, cotrain_run, multi_step_rollout, planner_mse, rl_mode_run,
    run_algorithm1, transfer_run, RunArtifacts, TrainedPolicy,
};
pub use soft_q::{
    q_regression_loss_grad, td_targets, ActingPolicy, QFunction, QGrad, SoftQLearner,
    SoftQSettings,
};

use crate::adversarial::AdversarialError;
use crate::approx::ApproxError;
use crate::depo::DepoError;
use thiserror::Error;

/// Errors raised while configuring or executing a training run.
#[derive(Debug, Error)]
pub enum TrainerError {
    #[error(transparent)]
    Depo(#[from] DepoError),
    #[error(transparent)]
    Adversarial(#[from] AdversarialError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("configuration could not be parsed: {0}")]
    ConfigParse(#[from] toml::de::Error),
    #[error("empty batch passed to {context}")]
    EmptyBatch { context: &'static str },
    #[error("{context}: expected {expected}, got {detail}")]
    ModeMismatch {
        context: &'static str,
        expected: &'static str,
        detail: String,
    },
    #[error("{context}: expected {expected} values, got {got}")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {context}; the run diverged and was aborted")]
    NonFinite { context: &'static str },
    #[error("environments do not share a state space: {detail}")]
    IncompatibleStateSpaces { detail: String },
    #[error("malformed metrics table: {reason}")]
    MalformedMetrics { reason: String },
    #[error("checkpoint error: {0}")]
    Io(#[from] std::io::Error),
}
