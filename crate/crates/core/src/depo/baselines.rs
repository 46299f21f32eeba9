//! Monolithic state-to-action policies (the non-decoupled baselines) and the
//! labeling step of behavioral cloning from observation (BCO): an inverse
//! dynamics model annotates expert state pairs with actions, then a
//! monolithic policy clones the labels.

use super::policy::{argmax, log_sum_exp, softmax, LOGITS_SLICE};
use super::{DecoupledPolicy, DepoError};
use crate::approx::{standard_normal, GaussianHead, Graph, Layout, Mat, ParamVector};
use crate::envs::ActionVal;
use crate::mdp::sample_categorical;
use rand::Rng;

/// A single state-to-action policy: softmax table (grid) or Gaussian MLP
/// (point-mass).
#[derive(Debug, Clone, PartialEq)]
pub enum MonolithicPolicy {
    TabularSoftmax {
        side: usize,
        n_states: usize,
        n_actions: usize,
        params: ParamVector,
    },
    Gaussian {
        state_dim: usize,
        action_dim: usize,
        head: GaussianHead,
        params: ParamVector,
    },
}

impl MonolithicPolicy {
    /// Uniform-initialized softmax table over a `side × side` grid.
    pub fn tabular(side: usize, n_actions: usize) -> Self {
        let n_states = side * side;
        MonolithicPolicy::TabularSoftmax {
            side,
            n_states,
            n_actions,
            params: ParamVector::zeros(Layout::new(&[(LOGITS_SLICE, n_states * n_actions)])),
        }
    }

    /// Randomly initialized Gaussian MLP policy.
    pub fn gaussian<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let head = GaussianHead::new(state_dim, hidden, action_dim);
        let parts = head.net.layout_parts();
        let borrowed: Vec<(&str, usize)> = parts.iter().map(|(n, c)| (n.as_str(), *c)).collect();
        let params = ParamVector::from_values(Layout::new(&borrowed), head.net.init_params(rng))
            .expect("layout length matches init length");
        MonolithicPolicy::Gaussian {
            state_dim,
            action_dim,
            head,
            params,
        }
    }

    pub fn params(&self) -> &ParamVector {
        match self {
            MonolithicPolicy::TabularSoftmax { params, .. } => params,
            MonolithicPolicy::Gaussian { params, .. } => params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        match self {
            MonolithicPolicy::TabularSoftmax { params, .. } => params,
            MonolithicPolicy::Gaussian { params, .. } => params,
        }
    }

    /// Dense index of a `[x, y]` grid state (tabular mode only).
    pub fn state_index(&self, state: &[f64]) -> usize {
        match self {
            MonolithicPolicy::TabularSoftmax { side, .. } => {
                let x = state[0].round() as usize;
                let y = state[1].round() as usize;
                assert!(x < *side && y < *side, "grid state out of range");
                y * side + x
            }
            MonolithicPolicy::Gaussian { .. } => {
                panic!("state_index is only defined for tabular policies")
            }
        }
    }

    /// Action distribution at a dense state index (tabular mode only).
    pub fn action_probs(&self, s_idx: usize) -> Vec<f64> {
        match self {
            MonolithicPolicy::TabularSoftmax {
                n_actions, params, ..
            } => {
                let logits = params.slice(LOGITS_SLICE).expect("logits slice");
                softmax(&logits[s_idx * n_actions..(s_idx + 1) * n_actions])
            }
            MonolithicPolicy::Gaussian { .. } => {
                panic!("action_probs is only defined for tabular policies")
            }
        }
    }

    /// One stochastic action draw.
    pub fn sample<R: Rng>(&self, state: &[f64], rng: &mut R) -> ActionVal {
        match self {
            MonolithicPolicy::TabularSoftmax { .. } => {
                let probs = self.action_probs(self.state_index(state));
                ActionVal::Discrete(sample_categorical(&probs, rng))
            }
            MonolithicPolicy::Gaussian {
                action_dim,
                head,
                params,
                ..
            } => {
                let (mean, log_std) = head
                    .mean_log_std(&params.values, &Mat::from_row(state))
                    .expect("policy forward");
                ActionVal::Continuous(
                    (0..*action_dim)
                        .map(|d| mean.get(0, d) + log_std.get(0, d).exp() * standard_normal(rng))
                        .collect(),
                )
            }
        }
    }

    /// Deterministic evaluation: argmax or mean.
    pub fn mode(&self, state: &[f64]) -> ActionVal {
        match self {
            MonolithicPolicy::TabularSoftmax { .. } => {
                ActionVal::Discrete(argmax(&self.action_probs(self.state_index(state))))
            }
            MonolithicPolicy::Gaussian { head, params, .. } => {
                let (mean, _) = head
                    .mean_log_std(&params.values, &Mat::from_row(state))
                    .expect("policy forward");
                ActionVal::Continuous(mean.row(0).to_vec())
            }
        }
    }

    /// Exact log-density/mass of `action` at `state`.
    pub fn log_prob(&self, state: &[f64], action: &ActionVal) -> f64 {
        match self {
            MonolithicPolicy::TabularSoftmax { n_actions, params, .. } => {
                // Log-softmax directly on the logits row for numerical honesty.
                let s_idx = self.state_index(state);
                let logits = params.slice(LOGITS_SLICE).expect("logits slice");
                let row = &logits[s_idx * n_actions..(s_idx + 1) * n_actions];
                row[action.as_discrete()] - log_sum_exp(row)
            }
            MonolithicPolicy::Gaussian { head, params, .. } => {
                let obs = Mat::from_row(action.as_continuous());
                head.log_prob(&params.values, &Mat::from_row(state), &obs)
                    .expect("policy log_prob")[0]
            }
        }
    }
}

/// Behavioral-cloning loss: `mean −log π(a|s)` over labeled pairs, with the
/// gradient with respect to the policy parameters.
pub fn bc_loss_grad(
    policy: &MonolithicPolicy,
    states: &[&[f64]],
    actions: &[ActionVal],
) -> Result<(f64, Vec<f64>), DepoError> {
    if states.is_empty() {
        return Err(DepoError::EmptyBatch {
            context: "bc_loss_grad",
        });
    }
    if states.len() != actions.len() {
        return Err(DepoError::LengthMismatch {
            context: "bc_loss_grad actions",
            expected: states.len(),
            got: actions.len(),
        });
    }
    match policy {
        MonolithicPolicy::TabularSoftmax {
            n_states,
            n_actions,
            params,
            ..
        } => {
            let s_indices: Vec<usize> = states.iter().map(|s| policy.state_index(s)).collect();
            let a_indices: Vec<usize> = actions.iter().map(|a| a.as_discrete()).collect();
            let mut g = Graph::new();
            let logits = g.param(params.slice(LOGITS_SLICE)?, *n_states, *n_actions);
            let rows = g.gather_rows(logits, s_indices);
            let lsm = g.log_softmax_rows(rows);
            let picked = g.pick(lsm, a_indices);
            let neg = g.affine(picked, -1.0, 0.0);
            let loss = g.mean_all(neg);
            let loss_val = g.value(loss).get(0, 0);
            let grads = g.backward(loss);
            let flat = grads.wrt_dense(logits, *n_states, *n_actions).data().to_vec();
            Ok((loss_val, flat))
        }
        MonolithicPolicy::Gaussian {
            state_dim,
            action_dim,
            head,
            params,
        } => {
            let mut inputs = Mat::zeros(states.len(), *state_dim);
            let mut obs = Mat::zeros(states.len(), *action_dim);
            for (r, (s, a)) in states.iter().zip(actions).enumerate() {
                for d in 0..*state_dim {
                    inputs.set(r, d, s[d]);
                }
                for (d, &v) in a.as_continuous().iter().enumerate() {
                    obs.set(r, d, v);
                }
            }
            let mut g = Graph::new();
            let x = g.constant(inputs);
            let (mean, log_std, binding) = head.build(&mut g, &params.values, x);
            let lp = g.gaussian_logp(mean, log_std, obs);
            let neg = g.affine(lp, -1.0, 0.0);
            let loss = g.mean_all(neg);
            let loss_val = g.value(loss).get(0, 0);
            let grads = g.backward(loss);
            let mut flat = vec![0.0; params.len()];
            head.net.accumulate_grads(&grads, &binding, &mut flat);
            Ok((loss_val, flat))
        }
    }
}

/// The labeling stage of BCO: annotate state pairs with the inverse-dynamics
/// model's deterministic action.
pub fn bco_label_pairs(
    policy: &DecoupledPolicy,
    pairs: &[(&[f64], &[f64])],
) -> Result<Vec<ActionVal>, DepoError> {
    if pairs.is_empty() {
        return Err(DepoError::EmptyBatch {
            context: "bco_label_pairs",
        });
    }
    Ok(pairs
        .iter()
        .map(|(s, nx)| policy.invdyn_deterministic(s, nx))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{central_difference, max_rel_error};
    use crate::envs::GridWorld;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tabular_bc_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut policy = MonolithicPolicy::tabular(3, 4);
        for v in &mut policy.params_mut().values {
            *v = rng.random_range(-1.0..1.0);
        }
        let states: Vec<Vec<f64>> = (0..10)
            .map(|_| {
                vec![
                    rng.random_range(0..3) as f64,
                    rng.random_range(0..3) as f64,
                ]
            })
            .collect();
        let state_refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let actions: Vec<ActionVal> = (0..10)
            .map(|_| ActionVal::Discrete(rng.random_range(0..4)))
            .collect();
        let (_, grad) = bc_loss_grad(&policy, &state_refs, &actions).unwrap();
        let center = policy.params().values.clone();
        let fd = central_difference(
            |v| {
                let mut p = policy.clone();
                p.params_mut().values.copy_from_slice(v);
                bc_loss_grad(&p, &state_refs, &actions).unwrap().0
            },
            &center,
            1e-5,
        );
        assert!(max_rel_error(&grad, &fd) <= 1e-4);
    }

    #[test]
    fn gaussian_bc_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let policy = MonolithicPolicy::gaussian(4, 2, &[6], &mut rng);
        let states: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let state_refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let actions: Vec<ActionVal> = (0..6)
            .map(|_| {
                ActionVal::Continuous(vec![
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ])
            })
            .collect();
        let (_, grad) = bc_loss_grad(&policy, &state_refs, &actions).unwrap();
        let center = policy.params().values.clone();
        let fd = central_difference(
            |v| {
                let mut p = policy.clone();
                p.params_mut().values.copy_from_slice(v);
                bc_loss_grad(&p, &state_refs, &actions).unwrap().0
            },
            &center,
            1e-5,
        );
        assert!(max_rel_error(&grad, &fd) <= 1e-4);
    }

    #[test]
    fn log_prob_matches_action_probs() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut policy = MonolithicPolicy::tabular(3, 4);
        for v in &mut policy.params_mut().values {
            *v = rng.random_range(-1.0..1.0);
        }
        let s = [2.0, 1.0];
        let probs = policy.action_probs(policy.state_index(&s));
        for a in 0..4 {
            let lp = policy.log_prob(&s, &ActionVal::Discrete(a));
            assert!((lp.exp() - probs[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_inverse_dynamics_labels_the_expert_path_exactly() {
        let grid = GridWorld::new(1);
        let mut policy = DecoupledPolicy::tabular(6, grid.n_actions());
        // One-hot inverse dynamics from the environment's exact inverse.
        if let DecoupledPolicy::Tabular(t) = &mut policy {
            let n_states = t.n_states;
            let n_actions = t.n_actions;
            let logits = t.invdyn.slice_mut(LOGITS_SLICE).unwrap();
            for s in 0..n_states {
                for sigma in 0..n_states {
                    if let Some(a) = grid.reaching_action(grid.cell_of(s), grid.cell_of(sigma)) {
                        logits[(s * n_states + sigma) * n_actions + a] = 40.0;
                    }
                }
            }
        }
        let path = grid.expert_path();
        let vecs: Vec<Vec<f64>> = path.iter().map(|&c| grid.state_vec(c)).collect();
        let pairs: Vec<(&[f64], &[f64])> = vecs
            .windows(2)
            .map(|w| (w[0].as_slice(), w[1].as_slice()))
            .collect();
        let labels = bco_label_pairs(&policy, &pairs).unwrap();
        for (label, cell) in labels.iter().zip(&path[..path.len() - 1]) {
            let expert = grid.expert_direction(*cell) as usize;
            assert_eq!(label.as_discrete(), expert);
        }
    }
}
