//! Exact policy evaluation, same-successor action groups, value invariance
//! under within-group action redistribution, and the diagonal-dominance
//! certificate for the planner-fixed-point system.

use super::{FiniteMdp, MdpError, PlannerRow, PlannerTable, TabularPolicy, PROB_SUM_TOL};
use nalgebra::{DMatrix, DVector};

/// Tolerance for recognizing one-hot transition rows when grouping actions.
const ONE_HOT_TOL: f64 = 1e-12;

/// State transition matrix `P_π(s'|s) = Σ_a π(a|s) T(s'|s,a)`, row-major S×S.
pub fn transition_matrix_under(mdp: &FiniteMdp, policy: &TabularPolicy) -> Vec<f64> {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let mut p = vec![0.0; n * n];
    for s in 0..n {
        for a in 0..na {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            let row = mdp.t_row(s, a);
            for s2 in 0..n {
                p[s * n + s2] += pa * row[s2];
            }
        }
    }
    p
}

/// Exact state values `V_π` for the state-transition reward `r(s, s')`, by LU
/// solve of `(I − γ P_π) V = r_π` with `r_π(s) = Σ_a π(a|s) Σ_{s'} T(s'|s,a) r(s,s')`.
pub fn evaluate_policy_values(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
) -> Result<Vec<f64>, MdpError> {
    if !mdp.has_reward() {
        return Err(MdpError::MissingReward);
    }
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let p = transition_matrix_under(mdp, policy);
    let mut r_pi = vec![0.0; n];
    for s in 0..n {
        let mut acc = 0.0;
        for a in 0..na {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            let row = mdp.t_row(s, a);
            for s2 in 0..n {
                acc += pa * row[s2] * mdp.reward(s, s2).unwrap();
            }
        }
        r_pi[s] = acc;
    }
    let mut a = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for s2 in 0..n {
            a[(s, s2)] -= mdp.discount() * p[s * n + s2];
        }
    }
    let b = DVector::from_column_slice(&r_pi);
    let v = a.lu().solve(&b).ok_or(MdpError::SingularSystem)?;
    Ok(v.iter().cloned().collect())
}

/// Partitions the actions of `state` into groups sharing the same deterministic
/// successor.  Errors if any transition row at `state` is not one-hot.
pub fn same_next_state_action_set(
    mdp: &FiniteMdp,
    state: usize,
) -> Result<Vec<Vec<usize>>, MdpError> {
    if state >= mdp.n_states() {
        return Err(MdpError::StateOutOfRange {
            state,
            n_states: mdp.n_states(),
        });
    }
    let mut successor_of = Vec::with_capacity(mdp.n_actions());
    for a in 0..mdp.n_actions() {
        let row = mdp.t_row(state, a);
        let mut hot = None;
        for (s2, &v) in row.iter().enumerate() {
            if (v - 1.0).abs() <= ONE_HOT_TOL {
                hot = Some(s2);
            } else if v.abs() > ONE_HOT_TOL {
                return Err(MdpError::NonDeterministicRow { state, action: a });
            }
        }
        match hot {
            Some(s2) => successor_of.push(s2),
            None => return Err(MdpError::NonDeterministicRow { state, action: a }),
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (a, &s2) in successor_of.iter().enumerate() {
        match groups.iter_mut().find(|(succ, _)| *succ == s2) {
            Some((_, g)) => g.push(a),
            None => groups.push((s2, vec![a])),
        }
    }
    Ok(groups.into_iter().map(|(_, g)| g).collect())
}

/// Result of replacing a policy's action distribution at one state by another
/// distribution supported on the same same-successor action group.
#[derive(Debug, Clone)]
pub struct RedistributionReport {
    /// The action group (shared deterministic successor) involved.
    pub group: Vec<usize>,
    /// Exact values of the original policy.
    pub values_base: Vec<f64>,
    /// Exact values after the redistribution.
    pub values_replaced: Vec<f64>,
    /// `max_s |V_base(s) − V_replaced(s)|`.
    pub max_value_diff: f64,
}

/// Verifies that moving action mass *within* a same-successor group at `state`
/// leaves the exact values of a state-transition-reward MDP unchanged.
///
/// Preconditions checked: the MDP carries a reward, rows at `state` are
/// deterministic, the policy's support at `state` lies inside a single group,
/// and `replacement` is a distribution supported inside that same group.
pub fn redistribution_value_report(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    state: usize,
    replacement: &[f64],
) -> Result<RedistributionReport, MdpError> {
    if !mdp.has_reward() {
        return Err(MdpError::MissingReward);
    }
    let groups = same_next_state_action_set(mdp, state)?;
    if replacement.len() != mdp.n_actions() {
        return Err(MdpError::BadShape {
            what: "replacement distribution",
            expected: mdp.n_actions(),
            got: replacement.len(),
        });
    }
    let mut rsum = 0.0;
    for (a, &v) in replacement.iter().enumerate() {
        if v < 0.0 {
            return Err(MdpError::NegativePolicy {
                state,
                action: a,
                value: v,
            });
        }
        rsum += v;
    }
    if (rsum - 1.0).abs() > PROB_SUM_TOL {
        return Err(MdpError::PolicyRowSum { state, sum: rsum });
    }

    let support: Vec<usize> = (0..mdp.n_actions())
        .filter(|&a| policy.prob(state, a) > 0.0)
        .collect();
    let group = groups
        .iter()
        .find(|g| support.iter().all(|a| g.contains(a)))
        .ok_or(MdpError::SupportSpansGroups { state })?
        .clone();
    for (a, &v) in replacement.iter().enumerate() {
        if v > 0.0 && !group.contains(&a) {
            return Err(MdpError::ReplacementOutsideGroup { action: a });
        }
    }

    let replaced = policy.with_row(state, replacement)?;
    let values_base = evaluate_policy_values(mdp, policy)?;
    let values_replaced = evaluate_policy_values(mdp, &replaced)?;
    let max_value_diff = values_base
        .iter()
        .zip(&values_replaced)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(RedistributionReport {
        group,
        values_base,
        values_replaced,
        max_value_diff,
    })
}

/// Column-dominance margins of the linear system tying a planner to its
/// transition-occupancy fixed point.
#[derive(Debug, Clone)]
pub struct DominanceReport {
    pub discount: f64,
    /// One margin `|A_cc| − Σ_{r≠c} |A_rc|` per column `c = (s'', s̃)`.
    pub margins: Vec<f64>,
    pub min_margin: f64,
    pub max_margin: f64,
}

impl DominanceReport {
    pub fn all_positive(&self) -> bool {
        self.min_margin > 0.0
    }
}

/// Computes the per-column diagonal-dominance margins of the S²×S² system
/// `A x = b` whose unique solution is the transition occupancy of a planner:
/// rows and columns are indexed by state pairs, with
/// `A[(s,s'),(s'',s̃)] = δ[(s,s') = (s'',s̃)] − γ·h(s'|s)·δ[s̃ = s]`.
///
/// Planner rows must all be defined (e.g. from [`super::marginal_planner`]).
pub fn column_dominance_report(
    planner: &PlannerTable,
    discount: f64,
) -> Result<DominanceReport, MdpError> {
    if !(discount > 0.0 && discount < 1.0) {
        return Err(MdpError::Discount(discount));
    }
    let n = planner.n_states();
    let mut h = vec![0.0; n * n];
    for s in 0..n {
        match planner.row(s) {
            PlannerRow::Distribution(d) => h[s * n..(s + 1) * n].copy_from_slice(d),
            PlannerRow::Undefined => {
                return Err(MdpError::BadShape {
                    what: "planner row (undefined)",
                    expected: n,
                    got: 0,
                })
            }
        }
    }
    let mut margins = Vec::with_capacity(n * n);
    for s_dd in 0..n {
        for s_tilde in 0..n {
            // Column c = (s'', s̃).  Nonzero rows are r = (s̃, s') for every s'
            // (the −γ h(s'|s̃) band) plus the diagonal r = c.
            let mut diag = 1.0;
            if s_dd == s_tilde {
                diag -= discount * h[s_tilde * n + s_tilde];
            }
            let mut off = 0.0;
            for s_p in 0..n {
                let entry = -discount * h[s_tilde * n + s_p];
                // Row (s̃, s') coincides with the diagonal only when s'' = s̃ = s'.
                if s_dd == s_tilde && s_p == s_tilde {
                    continue;
                }
                off += entry.abs();
            }
            margins.push(diag.abs() - off);
        }
    }
    let min_margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_margin = margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(DominanceReport {
        discount,
        margins,
        min_margin,
        max_margin,
    })
}
