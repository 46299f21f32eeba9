//! Action-redundancy witnesses: detecting when one action's transition row is a
//! convex combination of the other actions' rows at the same state, and the
//! pair of observationally equivalent policies such a witness induces.
//!
//! A witness certifies that distinct policies can share every state- and
//! state-transition occupancy while differing arbitrarily in how they split
//! mass across the redundant actions — the reason state-only imitation cannot
//! pin down a unique action policy.

use super::{occupancy_measures, FiniteMdp, MdpError, TabularPolicy};
use nalgebra::{DMatrix, DVector};

/// Elementwise tolerance for accepting a convex-combination reconstruction.
pub const WITNESS_TOL: f64 = 1e-9;

/// Convex-combination certificate of a redundant action.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyWitness {
    pub state: usize,
    /// The action whose row is reproduced by the others.
    pub action: usize,
    /// Mixture over all actions; `mixture[action] == 0` and the entries sum to 1.
    pub mixture: Vec<f64>,
}

impl RedundancyWitness {
    /// Recomputes the reconstruction residual: the worst elementwise difference
    /// between `Σ_a mixture[a]·T(·|s,a)` and `T(·|s,action)`.
    pub fn residual(&self, mdp: &FiniteMdp) -> f64 {
        let n = mdp.n_states();
        let mut worst = 0.0_f64;
        for s2 in 0..n {
            let mut acc = 0.0;
            for (a, &w) in self.mixture.iter().enumerate() {
                if w != 0.0 {
                    acc += w * mdp.t(self.state, a, s2);
                }
            }
            worst = worst.max((acc - mdp.t(self.state, self.action, s2)).abs());
        }
        worst
    }

    /// Errors unless the mixture is a valid distribution excluding `action`
    /// that reproduces the target row within [`WITNESS_TOL`].
    pub fn validate(&self, mdp: &FiniteMdp) -> Result<(), MdpError> {
        if self.mixture.len() != mdp.n_actions() {
            return Err(MdpError::BadShape {
                what: "witness mixture",
                expected: mdp.n_actions(),
                got: self.mixture.len(),
            });
        }
        if self.mixture[self.action] != 0.0 {
            return Err(MdpError::InvalidWitness {
                residual: f64::INFINITY,
            });
        }
        let mut sum = 0.0;
        for (a, &w) in self.mixture.iter().enumerate() {
            if w < 0.0 {
                return Err(MdpError::NegativePolicy {
                    state: self.state,
                    action: a,
                    value: w,
                });
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MdpError::PolicyRowSum {
                state: self.state,
                sum,
            });
        }
        let residual = self.residual(mdp);
        if residual > WITNESS_TOL {
            return Err(MdpError::InvalidWitness { residual });
        }
        Ok(())
    }
}

/// Lawson–Hanson active-set solver for `min ‖Ax − b‖₂ subject to x ≥ 0`.
/// Returns the solution and the final residual norm.
pub fn nonnegative_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = a.ncols();
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.amax().max(1.0);

    for _outer in 0..(3 * n + 30) {
        // Gradient of ½‖Ax − b‖²  is  Aᵀ(Ax − b); descent directions have w > 0.
        let resid = b - a * &x;
        let w = a.transpose() * &resid;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && w[j] > tol {
                if best.map(|(_, bw)| w[j] > bw).unwrap_or(true) {
                    best = Some((j, w[j]));
                }
            }
        }
        let Some((j_star, _)) = best else { break };
        passive[j_star] = true;

        loop {
            // Unconstrained least squares on the passive columns.
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(cols.iter());
            let svd = sub.svd(true, true);
            let z_sub = svd.solve(b, 1e-13).expect("SVD solve cannot fail");
            let mut z = DVector::<f64>::zeros(n);
            for (k, &j) in cols.iter().enumerate() {
                z[j] = z_sub[k];
            }
            if cols.iter().all(|&j| z[j] > tol) {
                x = z;
                break;
            }
            // Step from x toward z, stopping at the first variable to hit zero.
            let mut alpha = f64::INFINITY;
            for &j in &cols {
                if z[j] <= tol {
                    let denom = x[j] - z[j];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            let alpha = alpha.min(1.0).max(0.0);
            for j in 0..n {
                x[j] += alpha * (z[j] - x[j]);
            }
            for &j in &cols {
                if x[j] <= tol {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    let resid = (b - a * &x).norm();
    (x, resid)
}

/// Searches for a convex combination of the *other* actions' rows reproducing
/// `T(·|state, action)`.  The sum-to-one constraint is enforced by an extra
/// all-ones equation row weighted heavily relative to the transition rows.
pub fn redundancy_witness_at(
    mdp: &FiniteMdp,
    state: usize,
    action: usize,
) -> Option<RedundancyWitness> {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    if na < 2 {
        return None;
    }
    let others: Vec<usize> = (0..na).filter(|&a| a != action).collect();
    // Rows: S transition coordinates plus one ∑w = 1 constraint row.
    const SUM_WEIGHT: f64 = 1.0e3;
    let mut a = DMatrix::<f64>::zeros(n + 1, others.len());
    let mut b = DVector::<f64>::zeros(n + 1);
    for (col, &oa) in others.iter().enumerate() {
        for s2 in 0..n {
            a[(s2, col)] = mdp.t(state, oa, s2);
        }
        a[(n, col)] = SUM_WEIGHT;
    }
    for s2 in 0..n {
        b[s2] = mdp.t(state, action, s2);
    }
    b[n] = SUM_WEIGHT;

    let (w, _) = nonnegative_least_squares(&a, &b);
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut mixture = vec![0.0; na];
    for (col, &oa) in others.iter().enumerate() {
        mixture[oa] = w[col] / total;
    }
    let witness = RedundancyWitness {
        state,
        action,
        mixture,
    };
    (witness.residual(mdp) <= WITNESS_TOL).then_some(witness)
}

/// First redundancy witness in `(state, action)` scan order, if any exists.
pub fn find_redundancy_witness(mdp: &FiniteMdp) -> Option<RedundancyWitness> {
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            if let Some(w) = redundancy_witness_at(mdp, s, a) {
                return Some(w);
            }
        }
    }
    None
}

/// Builds the canonical pair of distinct policies that a redundancy witness
/// makes observationally equivalent: both behave like `base` except at the
/// witness state, where one plays the redundant action deterministically and
/// the other plays the witness mixture.  Their state and state-transition
/// occupancies coincide exactly while the state-action occupancies differ.
pub fn counterexample_policies(
    mdp: &FiniteMdp,
    witness: &RedundancyWitness,
    base: &TabularPolicy,
) -> Result<(TabularPolicy, TabularPolicy), MdpError> {
    witness.validate(mdp)?;
    let mut point = vec![0.0; mdp.n_actions()];
    point[witness.action] = 1.0;
    let pi0 = base.with_row(witness.state, &point)?;
    let pi1 = base.with_row(witness.state, &witness.mixture)?;
    Ok((pi0, pi1))
}

/// Worst-entry distance between the state-action occupancies of two policies;
/// convenience for quantifying how far apart occupancy-equivalent policies are.
pub fn state_action_occupancy_gap(
    mdp: &FiniteMdp,
    pi0: &TabularPolicy,
    pi1: &TabularPolicy,
) -> Result<f64, MdpError> {
    let om0 = occupancy_measures(mdp, pi0)?;
    let om1 = occupancy_measures(mdp, pi1)?;
    Ok(om0
        .state_action_vec()
        .iter()
        .zip(om1.state_action_vec())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}
