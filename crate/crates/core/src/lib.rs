//! Desk-scale laboratory for **decoupled policy optimization** (DePO): state-only
//! imitation learning with a policy factored into a state planner `h(s'|s)` and an
//! inverse-dynamics model `I(a|s,s')`.
//!
//! The crate is organized in layers:
//!
//! * [`approx`] — dense-matrix reverse-mode autodiff, MLP/Gaussian heads, named flat
//!   parameter vectors with bit-exact checkpoints, Adam, and a central-difference
//!   gradient oracle.
//! * [`mdp`] — exact algebra on finite MDPs: occupancy measures by linear solve, the
//!   planner/occupancy bijection, action-redundancy witnesses, diagonal-dominance
//!   certificates, and value-invariance checks under within-group action
//!   redistribution.
//! * [`envs`] — a 6×6 grid world with configurable action redundancy and a
//!   deterministic 2-D point mass with remappable action semantics, plus state-only
//!   demonstration containers with binary round-trip storage.
//! * [`adversarial`] — discriminators over state transitions (tabular and MLP with
//!   analytic gradient penalty) and the log-density reward they induce.
//! * [`depo`] — the decoupled policy itself, its gradient estimators (supervised,
//!   decoupled policy gradient, calibrated decoupled policy gradient, combined),
//!   monolithic/behavioral-cloning baselines, and a checkable one-step error bound.
//! * [`trainer`] — replay buffer, soft-Q critic, experiment configuration, metrics,
//!   and the single-run / transfer / co-training harnesses.
//! * [`verify`] — library entry points for the reproducible verification suites
//!   exposed by the command-line tool and reused by the acceptance tests.

pub mod adversarial;
pub mod approx;
pub mod depo;
pub mod envs;
pub mod mdp;
pub mod trainer;
pub mod verify;
