//! The decoupled policy and its training signals.
//!
//! A decoupled policy factors action selection into a *state planner*
//! `h_ψ(s'|s)` (where do I want to be next?) and an *inverse dynamics model*
//! `I_φ(a|s,s')` (which action gets me there?), composed as
//! `π(a|s) = E_{ŝ'∼h_ψ}[I_φ(a|s,ŝ')]`. This module provides:
//!
//! - [`DecoupledPolicy`]: tabular (grid) and Gaussian (point-mass) variants
//!   with stochastic and deterministic evaluation modes ([`policy`]);
//! - the gradient estimators that train the planner and inverse dynamics:
//!   maximum-likelihood losses, the decoupled policy gradient (DePG) with its
//!   importance weight, and the calibrated variant (CDePG) that re-anchors the
//!   planner on environment-observed successors ([`gradients`]);
//! - monolithic state-to-action baselines and behavioral cloning from
//!   observation ([`baselines`]);
//! - a per-state compounding-error bound check splitting the one-step gap
//!   into planner and inverse-dynamics terms with measured Lipschitz
//!   constants ([`bound`]);
//! - grid-world planner diagnostics classifying argmax predictions as
//!   legal/illegal and on/off the expert route ([`diagnostics`]).

mod baselines;
mod bound;
mod diagnostics;
mod gradients;
mod policy;

pub use baselines::{bco_label_pairs, bc_loss_grad, MonolithicPolicy};
pub use bound::{
    one_step_error_bound_report, BoundSample, ErrorBoundReport, ReferenceInverse, BOUND_TOL,
};
pub use diagnostics::{grid_planner_report, GridPlannerReport, PredictionClass};
pub use gradients::{
    apply_planner_step, cdepg_grad, combined_planner_gradient, depg_continuous_core, depg_grad,
    depg_grad_dropping_unsupported, inverse_dynamics_loss_grad, normalize_batch_weights,
    supervised_planner_grad, GradientReport, PlannerUpdateSpec, DEFAULT_IMPORTANCE_CLIP,
    POLICY_PROB_FLOOR,
};
pub use policy::{
    ContinuousDecoupled, DecoupledPolicy, TabularDecoupled, LOGITS_SLICE, MIN_MARGINAL_SAMPLES,
};

use crate::approx::ApproxError;
use thiserror::Error;

/// Errors raised while evaluating or training decoupled policies.
#[derive(Debug, Error)]
pub enum DepoError {
    #[error(transparent)]
    Approx(#[from] ApproxError),
    /// The composed policy assigns (numerically) no probability to an action
    /// that the importance weight must divide by — the signal that the
    /// planner/inverse-dynamics pair no longer covers the sampled behavior.
    #[error(
        "composed policy probability {prob:.3e} for batch element {index} is below \
         the floor {floor:.3e} (support collapse)"
    )]
    SupportCollapse {
        index: usize,
        prob: f64,
        floor: f64,
    },
    #[error("empty batch passed to {context}")]
    EmptyBatch { context: &'static str },
    #[error("{context}: expected {expected} per-element values, got {got}")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{context} requires a {expected} policy")]
    ModeMismatch {
        context: &'static str,
        expected: &'static str,
    },
    #[error("non-finite value produced in {context}")]
    NonFinite { context: &'static str },
}
