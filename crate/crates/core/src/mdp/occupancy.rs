//! Discounted occupancy measures by exact linear solve, and the bijection
//! between occupancy measures and the marginal state planner.
//!
//! For a policy π with state transition matrix `P_π(s'|s) = Σ_a π(a|s)T(s'|s,a)`,
//! the (unnormalized) state occupancy `ρ(s) = Σ_t γᵗ P(s_t = s)` satisfies the
//! flow equation `ρ = ρ₀ + γ P_πᵀ ρ`, solved here with an LU factorization of
//! `I − γ P_πᵀ`.  Derived measures follow by multiplication:
//! `ρ(s,a) = π(a|s)·ρ(s)` and `ρ(s,s') = Σ_a ρ(s,a)·T(s'|s,a)`.  Total mass is
//! `1/(1−γ)`; occupancies are *not* normalized to probability distributions.
//!
//! Normalizing the rows of the transition occupancy recovers the planner
//! `h(s'|s) = ρ(s,s') / Σ_x ρ(s,x)`, which on visited states coincides with the
//! action-marginal `Σ_a π(a|s)T(s'|s,a)` — the bijection the decoupled policy
//! architecture rests on.

use super::{FiniteMdp, MdpError, TabularPolicy};
use nalgebra::{DMatrix, DVector};

/// Threshold below which a state's occupancy row is treated as "never visited"
/// when normalizing to planner rows; exact solves leave at most O(1e-14) noise
/// on truly unreachable states.
pub const VISITATION_EPS: f64 = 1e-12;

/// State, state-action, and state-transition occupancy measures of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasures {
    n_states: usize,
    n_actions: usize,
    /// ρ(s), length S.
    state: Vec<f64>,
    /// ρ(s,a), row-major S×A.
    state_action: Vec<f64>,
    /// ρ(s,s'), row-major S×S.
    transition: Vec<f64>,
}

impl OccupancyMeasures {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// ρ(s).
    pub fn state(&self, s: usize) -> f64 {
        self.state[s]
    }

    pub fn state_vec(&self) -> &[f64] {
        &self.state
    }

    /// ρ(s,a).
    pub fn state_action(&self, s: usize, a: usize) -> f64 {
        self.state_action[s * self.n_actions + a]
    }

    pub fn state_action_vec(&self) -> &[f64] {
        &self.state_action
    }

    /// ρ(s,s').
    pub fn transition(&self, s: usize, s2: usize) -> f64 {
        self.transition[s * self.n_states + s2]
    }

    pub fn transition_vec(&self) -> &[f64] {
        &self.transition
    }

    /// Σ_s ρ(s); equals 1/(1−γ) up to solver roundoff.
    pub fn total_mass(&self) -> f64 {
        self.state.iter().sum()
    }

    /// Worst-coordinate residual of the flow equation
    /// `ρ(s') − ρ₀(s') − γ Σ_s ρ(s) P_π(s'|s)`.
    pub fn max_flow_residual(&self, mdp: &FiniteMdp, policy: &TabularPolicy) -> f64 {
        let p = super::transition_matrix_under(mdp, policy);
        let n = self.n_states;
        let mut worst = 0.0_f64;
        for s2 in 0..n {
            let mut inflow = 0.0;
            for s in 0..n {
                inflow += self.state[s] * p[s * n + s2];
            }
            let resid = (self.state[s2] - mdp.initial()[s2] - mdp.discount() * inflow).abs();
            worst = worst.max(resid);
        }
        worst
    }

    /// Largest violation of the consistency identities
    /// `ρ(s) = Σ_a ρ(s,a)` and `ρ(s) = Σ_{s'} ρ(s,s')`.
    pub fn max_consistency_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for s in 0..self.n_states {
            let by_action: f64 = (0..self.n_actions).map(|a| self.state_action(s, a)).sum();
            let by_next: f64 = (0..self.n_states).map(|s2| self.transition(s, s2)).sum();
            worst = worst.max((by_action - self.state[s]).abs());
            worst = worst.max((by_next - self.state[s]).abs());
        }
        worst
    }

    /// Most negative entry across all three measures (0 when none are negative).
    pub fn most_negative_entry(&self) -> f64 {
        self.state
            .iter()
            .chain(&self.state_action)
            .chain(&self.transition)
            .fold(0.0_f64, |m, &v| m.min(v))
    }
}

/// Solves the discounted flow equation for the state occupancy ρ(s).
pub fn state_occupancy(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<Vec<f64>, MdpError> {
    check_compat(mdp, policy)?;
    let n = mdp.n_states();
    let p = super::transition_matrix_under(mdp, policy);
    // A = I − γ P_πᵀ, so that A ρ = ρ₀ encodes ρ = ρ₀ + γ P_πᵀ ρ.
    let mut a = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for s2 in 0..n {
            a[(s2, s)] -= mdp.discount() * p[s * n + s2];
        }
    }
    let b = DVector::from_column_slice(mdp.initial());
    let lu = a.lu();
    let rho = lu.solve(&b).ok_or(MdpError::SingularSystem)?;
    Ok(rho.iter().cloned().collect())
}

/// Computes all three occupancy measures of a policy.
pub fn occupancy_measures(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
) -> Result<OccupancyMeasures, MdpError> {
    let state = state_occupancy(mdp, policy)?;
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let mut state_action = vec![0.0; n * na];
    let mut transition = vec![0.0; n * n];
    for s in 0..n {
        for a in 0..na {
            let rho_sa = policy.prob(s, a) * state[s];
            state_action[s * na + a] = rho_sa;
            if rho_sa != 0.0 {
                let row = mdp.t_row(s, a);
                for s2 in 0..n {
                    transition[s * n + s2] += rho_sa * row[s2];
                }
            }
        }
    }
    Ok(OccupancyMeasures {
        n_states: n,
        n_actions: na,
        state,
        state_action,
        transition,
    })
}

/// One row of a [`PlannerTable`]: a distribution over successor states, or
/// undefined because the state is never visited under the inducing policy.
#[derive(Debug, Clone, PartialEq)]
pub enum PlannerRow {
    Distribution(Vec<f64>),
    Undefined,
}

/// Marginal state planner `h(s'|s)` as a table of per-state successor
/// distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerTable {
    n_states: usize,
    rows: Vec<PlannerRow>,
}

impl PlannerTable {
    pub fn from_rows(rows: Vec<PlannerRow>) -> Self {
        PlannerTable {
            n_states: rows.len(),
            rows,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn row(&self, s: usize) -> &PlannerRow {
        &self.rows[s]
    }

    /// h(s'|s); `None` when the row is undefined.
    pub fn prob(&self, s: usize, s2: usize) -> Option<f64> {
        match &self.rows[s] {
            PlannerRow::Distribution(d) => Some(d[s2]),
            PlannerRow::Undefined => None,
        }
    }

    /// Worst absolute difference from `other` over rows defined in both tables.
    pub fn max_abs_diff_on_defined(&self, other: &PlannerTable) -> f64 {
        assert_eq!(self.n_states, other.n_states, "planner table size mismatch");
        let mut worst = 0.0_f64;
        for s in 0..self.n_states {
            if let (PlannerRow::Distribution(a), PlannerRow::Distribution(b)) =
                (&self.rows[s], &other.rows[s])
            {
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        worst
    }
}

/// Action-marginal planner `h(s'|s) = Σ_a π(a|s) T(s'|s,a)`, defined at every
/// state regardless of visitation.
pub fn marginal_planner(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<PlannerTable, MdpError> {
    check_compat(mdp, policy)?;
    let n = mdp.n_states();
    let p = super::transition_matrix_under(mdp, policy);
    let rows = (0..n)
        .map(|s| PlannerRow::Distribution(p[s * n..(s + 1) * n].to_vec()))
        .collect();
    Ok(PlannerTable::from_rows(rows))
}

/// Planner recovered from a transition occupancy by row normalization; rows
/// with (numerically) zero visitation are marked [`PlannerRow::Undefined`].
pub fn planner_from_occupancy(om: &OccupancyMeasures) -> PlannerTable {
    let n = om.n_states();
    let mut rows = Vec::with_capacity(n);
    for s in 0..n {
        let total: f64 = (0..n).map(|s2| om.transition(s, s2)).sum();
        if total <= VISITATION_EPS {
            rows.push(PlannerRow::Undefined);
        } else {
            rows.push(PlannerRow::Distribution(
                (0..n).map(|s2| om.transition(s, s2) / total).collect(),
            ));
        }
    }
    PlannerTable::from_rows(rows)
}

fn check_compat(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<(), MdpError> {
    if policy.n_states() != mdp.n_states() {
        return Err(MdpError::BadShape {
            what: "policy states",
            expected: mdp.n_states(),
            got: policy.n_states(),
        });
    }
    if policy.n_actions() != mdp.n_actions() {
        return Err(MdpError::BadShape {
            what: "policy actions",
            expected: mdp.n_actions(),
            got: policy.n_actions(),
        });
    }
    Ok(())
}
