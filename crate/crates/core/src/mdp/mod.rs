//! Exact algebra on finite Markov decision processes.
//!
//! States and actions are dense indices.  A [`FiniteMdp`] stores the transition
//! kernel `T[s][a][s']` row-major together with the initial distribution and
//! discount; an optional state-transition reward `r(s, s')` enables exact policy
//! evaluation.  All quantities in this module are computed by direct linear
//! algebra (LU solves), never by sampling, so results are deterministic to
//! floating-point roundoff.

mod analysis;
mod occupancy;
mod redundancy;
pub mod sampling;

pub use analysis::{
    column_dominance_report, evaluate_policy_values, redistribution_value_report,
    same_next_state_action_set, transition_matrix_under, DominanceReport, RedistributionReport,
};
pub use occupancy::{
    marginal_planner, occupancy_measures, planner_from_occupancy, state_occupancy,
    OccupancyMeasures, PlannerRow, PlannerTable,
};
pub use redundancy::{
    counterexample_policies, find_redundancy_witness, nonnegative_least_squares,
    redundancy_witness_at, state_action_occupancy_gap, RedundancyWitness,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for "this vector of probabilities sums to one" during validation.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Errors for construction and analysis of finite MDPs.
#[derive(Debug, Error)]
pub enum MdpError {
    #[error("transition row (state {state}, action {action}) sums to {sum}, expected 1")]
    TransitionRowSum { state: usize, action: usize, sum: f64 },
    #[error("negative transition entry T[{state}][{action}][{next}] = {value}")]
    NegativeTransition {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },
    #[error("initial distribution sums to {sum}, expected 1")]
    InitialSum { sum: f64 },
    #[error("negative initial probability at state {state}: {value}")]
    NegativeInitial { state: usize, value: f64 },
    #[error("discount {0} outside open interval (0, 1)")]
    Discount(f64),
    #[error("{what} has length {got}, expected {expected}")]
    BadShape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("policy row at state {state} sums to {sum}, expected 1")]
    PolicyRowSum { state: usize, sum: f64 },
    #[error("negative policy probability π({action}|{state}) = {value}")]
    NegativePolicy {
        state: usize,
        action: usize,
        value: f64,
    },
    #[error("state index {state} out of range (n_states = {n_states})")]
    StateOutOfRange { state: usize, n_states: usize },
    #[error("operation requires a reward table but the MDP has none")]
    MissingReward,
    #[error("transition row (state {state}, action {action}) is not deterministic (one-hot)")]
    NonDeterministicRow { state: usize, action: usize },
    #[error(
        "policy support at state {state} spans more than one same-successor action group"
    )]
    SupportSpansGroups { state: usize },
    #[error("replacement distribution puts mass on action {action}, outside the action group")]
    ReplacementOutsideGroup { action: usize },
    #[error("redundancy witness invalid: mixture reproduces the target row only to {residual}")]
    InvalidWitness { residual: f64 },
    #[error("linear system for occupancy measures was singular (unexpected for discount < 1)")]
    SingularSystem,
    #[error("could not parse MDP file: {0}")]
    Parse(String),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Finite MDP with dense transition kernel and optional `r(s, s')` reward.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// Row-major `[s][a][s']`.
    transition: Vec<f64>,
    initial: Vec<f64>,
    discount: f64,
    /// Row-major `[s][s']` state-transition reward, if any.
    reward: Option<Vec<f64>>,
}

impl FiniteMdp {
    /// Validates and constructs; reports the first violated constraint with
    /// the indices involved.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        initial: Vec<f64>,
        discount: f64,
        reward: Option<Vec<f64>>,
    ) -> Result<Self, MdpError> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(MdpError::Discount(discount));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(MdpError::BadShape {
                what: "transition table",
                expected: n_states * n_actions * n_states,
                got: transition.len(),
            });
        }
        if initial.len() != n_states {
            return Err(MdpError::BadShape {
                what: "initial distribution",
                expected: n_states,
                got: initial.len(),
            });
        }
        if let Some(r) = &reward {
            if r.len() != n_states * n_states {
                return Err(MdpError::BadShape {
                    what: "reward table",
                    expected: n_states * n_states,
                    got: r.len(),
                });
            }
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let mut sum = 0.0;
                for s2 in 0..n_states {
                    let v = transition[(s * n_actions + a) * n_states + s2];
                    if v < 0.0 {
                        return Err(MdpError::NegativeTransition {
                            state: s,
                            action: a,
                            next: s2,
                            value: v,
                        });
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    return Err(MdpError::TransitionRowSum {
                        state: s,
                        action: a,
                        sum,
                    });
                }
            }
        }
        let mut isum = 0.0;
        for (s, &v) in initial.iter().enumerate() {
            if v < 0.0 {
                return Err(MdpError::NegativeInitial { state: s, value: v });
            }
            isum += v;
        }
        if (isum - 1.0).abs() > PROB_SUM_TOL {
            return Err(MdpError::InitialSum { sum: isum });
        }
        Ok(FiniteMdp {
            n_states,
            n_actions,
            transition,
            initial,
            discount,
            reward,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// `T(s'|s,a)`.
    pub fn t(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s2]
    }

    /// Transition row `T(·|s,a)` as a slice.
    pub fn t_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    /// `r(s, s')`, if the MDP carries a reward table.
    pub fn reward(&self, s: usize, s2: usize) -> Option<f64> {
        self.reward.as_ref().map(|r| r[s * self.n_states + s2])
    }

    pub fn has_reward(&self) -> bool {
        self.reward.is_some()
    }

    /// Returns a copy with the reward table replaced.
    pub fn with_reward(&self, reward: Vec<f64>) -> Result<Self, MdpError> {
        FiniteMdp::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.initial.clone(),
            self.discount,
            Some(reward),
        )
    }

    /// Parses the TOML on-disk format (flattened row-major tables), running the
    /// same validation as [`FiniteMdp::new`].
    pub fn from_toml_str(text: &str) -> Result<Self, MdpError> {
        let raw: MdpFile = toml::from_str(text).map_err(|e| MdpError::Parse(e.to_string()))?;
        FiniteMdp::new(
            raw.n_states,
            raw.n_actions,
            raw.transition,
            raw.initial,
            raw.discount,
            raw.reward,
        )
    }

    /// Canonical TOML serialization of this MDP.
    pub fn to_toml_string(&self) -> String {
        let raw = MdpFile {
            n_states: self.n_states,
            n_actions: self.n_actions,
            discount: self.discount,
            initial: self.initial.clone(),
            transition: self.transition.clone(),
            reward: self.reward.clone(),
        };
        toml::to_string(&raw).expect("MDP serialization cannot fail")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, MdpError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), MdpError> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    initial: Vec<f64>,
    transition: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward: Option<Vec<f64>>,
}

/// Stochastic stationary policy π(a|s) as a dense row-stochastic table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self, MdpError> {
        if probs.len() != n_states * n_actions {
            return Err(MdpError::BadShape {
                what: "policy table",
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for s in 0..n_states {
            let mut sum = 0.0;
            for a in 0..n_actions {
                let v = probs[s * n_actions + a];
                if v < 0.0 {
                    return Err(MdpError::NegativePolicy {
                        state: s,
                        action: a,
                        value: v,
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(MdpError::PolicyRowSum { state: s, sum });
            }
        }
        Ok(TabularPolicy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// π(a|s).
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    /// Row π(·|s).
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Copy with one row replaced (validated).
    pub fn with_row(&self, s: usize, row: &[f64]) -> Result<Self, MdpError> {
        if row.len() != self.n_actions {
            return Err(MdpError::BadShape {
                what: "policy row",
                expected: self.n_actions,
                got: row.len(),
            });
        }
        let mut probs = self.probs.clone();
        probs[s * self.n_actions..(s + 1) * self.n_actions].copy_from_slice(row);
        TabularPolicy::new(self.n_states, self.n_actions, probs)
    }

    /// Samples an action from π(·|s).
    pub fn sample<R: rand::Rng>(&self, s: usize, rng: &mut R) -> usize {
        sample_categorical(self.row(s), rng)
    }
}

/// Samples an index from an (approximately normalized) probability vector.
pub(crate) fn sample_categorical<R: rand::Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> FiniteMdp {
        // Two states, one action: s0 → s1 → s1 deterministically.
        FiniteMdp::new(
            2,
            1,
            vec![0.0, 1.0, 0.0, 1.0],
            vec![1.0, 0.0],
            0.5,
            None,
        )
        .unwrap()
    }

    #[test]
    fn construction_validates_rows_and_reports_indices() {
        let bad = FiniteMdp::new(2, 1, vec![0.3, 0.3, 0.0, 1.0], vec![1.0, 0.0], 0.5, None);
        match bad {
            Err(MdpError::TransitionRowSum { state: 0, action: 0, .. }) => {}
            other => panic!("expected row-sum error, got {other:?}"),
        }
        let neg = FiniteMdp::new(2, 1, vec![-0.1, 1.1, 0.0, 1.0], vec![1.0, 0.0], 0.5, None);
        assert!(matches!(
            neg,
            Err(MdpError::NegativeTransition { state: 0, action: 0, next: 0, .. })
        ));
        assert!(matches!(
            FiniteMdp::new(1, 1, vec![1.0], vec![1.0], 1.0, None),
            Err(MdpError::Discount(_))
        ));
        assert!(matches!(
            FiniteMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![0.6, 0.6], 0.5, None),
            Err(MdpError::InitialSum { .. })
        ));
    }

    #[test]
    fn toml_round_trip_preserves_the_mdp() {
        let m = chain().with_reward(vec![0.0, 1.0, 0.0, 0.25]).unwrap();
        let text = m.to_toml_string();
        let back = FiniteMdp::from_toml_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn unknown_toml_fields_are_rejected() {
        let text = r#"
            n_states = 1
            n_actions = 1
            discount = 0.9
            initial = [1.0]
            transition = [1.0]
            horizon = 10
        "#;
        let err = FiniteMdp::from_toml_str(text).unwrap_err();
        assert!(matches!(err, MdpError::Parse(_)), "got {err:?}");
    }

    #[test]
    fn invalid_file_reports_first_violated_constraint() {
        let text = r#"
            n_states = 2
            n_actions = 1
            discount = 0.9
            initial = [1.0, 0.0]
            transition = [0.7, 0.2, 0.0, 1.0]
        "#;
        match FiniteMdp::from_toml_str(text) {
            Err(MdpError::TransitionRowSum { state: 0, action: 0, sum }) => {
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("expected row-sum diagnostic, got {other:?}"),
        }
    }

    #[test]
    fn policy_validation_matches_mdp_validation() {
        assert!(TabularPolicy::new(2, 2, vec![0.5, 0.5, 0.9, 0.2]).is_err());
        assert!(TabularPolicy::new(2, 2, vec![0.5, 0.5, -0.1, 1.1]).is_err());
        let p = TabularPolicy::uniform(3, 4);
        assert!((p.row(2).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
