//! Entropy-regularized temporal-difference learning.
//!
//! The critic regresses `Q(s,a)` toward the soft Bellman target
//! `y = r + γ(1−done)·(Q̄(s′,a′) − α·log π(a′|s′))` against a *target* copy
//! `Q̄` that trails the online parameters through soft mixing
//! (`θ̄ ← (1−τ)θ̄ + τθ` after every step). Tabular mode backs up the exact
//! expectation over next actions; continuous mode uses one sampled next
//! action and the minimum of twin networks (the standard overestimation
//! guard).
//!
//! Target construction ([`td_targets`]) and the regression itself
//! ([`q_regression_loss_grad`]) are split so the deterministic regression
//! half can be verified by finite differences with frozen targets.

use super::TrainerError;
use crate::approx::{Adam, Graph, Layout, Mat, MlpSpec, ParamVector};
use crate::depo::{DecoupledPolicy, MonolithicPolicy, MIN_MARGINAL_SAMPLES};
use crate::envs::{ActionVal, Transition};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Name of the parameter slice holding the tabular value table.
pub const TABLE_SLICE: &str = "q";

/// A state-action value function: an exact table on the grid, twin MLPs over
/// concatenated `[s, a]` inputs (value = their minimum) in continuous mode.
#[derive(Debug, Clone, PartialEq)]
pub enum QFunction {
    Table {
        side: usize,
        n_states: usize,
        n_actions: usize,
        /// Row-major `[state][action]` values in slice [`TABLE_SLICE`].
        values: ParamVector,
    },
    Twin {
        state_dim: usize,
        action_dim: usize,
        net: MlpSpec,
        q1: ParamVector,
        q2: ParamVector,
    },
}

fn mlp_params<R: Rng>(net: &MlpSpec, rng: &mut R) -> ParamVector {
    let parts = net.layout_parts();
    let borrowed: Vec<(&str, usize)> = parts.iter().map(|(n, c)| (n.as_str(), *c)).collect();
    ParamVector::from_values(Layout::new(&borrowed), net.init_params(rng))
        .expect("layout length matches init length")
}

impl QFunction {
    /// Zero-initialized table over a `side × side` grid.
    pub fn tabular(side: usize, n_actions: usize) -> Self {
        let n_states = side * side;
        QFunction::Table {
            side,
            n_states,
            n_actions,
            values: ParamVector::zeros(Layout::new(&[(TABLE_SLICE, n_states * n_actions)])),
        }
    }

    /// Independently initialized twin networks `[s, a] → ℝ`.
    pub fn twin<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = MlpSpec::new(&sizes);
        let q1 = mlp_params(&net, rng);
        let q2 = mlp_params(&net, rng);
        QFunction::Twin {
            state_dim,
            action_dim,
            net,
            q1,
            q2,
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self, QFunction::Table { .. })
    }

    pub fn n_params(&self) -> usize {
        match self {
            QFunction::Table { values, .. } => values.len(),
            QFunction::Twin { q1, q2, .. } => q1.len() + q2.len(),
        }
    }

    fn state_index(side: usize, state: &[f64]) -> usize {
        let x = state[0].round() as usize;
        let y = state[1].round() as usize;
        y * side + x
    }

    /// `Q(s,a)`: the table entry, or the minimum of the twin networks.
    /// Panics if the action kind does not match the mode (as the underlying
    /// action accessors do).
    pub fn value(&self, state: &[f64], action: &ActionVal) -> f64 {
        match self {
            QFunction::Table {
                side,
                n_actions,
                values,
                ..
            } => {
                let s = Self::state_index(*side, state);
                values.values[s * n_actions + action.as_discrete()]
            }
            QFunction::Twin {
                state_dim,
                action_dim,
                net,
                q1,
                q2,
            } => {
                let a = action.as_continuous();
                let mut row = Vec::with_capacity(state_dim + action_dim);
                row.extend_from_slice(state);
                row.extend_from_slice(a);
                let x = Mat::from_row(&row);
                let v1 = net.forward(&q1.values, &x).expect("twin forward").get(0, 0);
                let v2 = net.forward(&q2.values, &x).expect("twin forward").get(0, 0);
                v1.min(v2)
            }
        }
    }

    /// The per-action value row of a tabular function; `None` in continuous
    /// mode.
    pub fn table_row(&self, state: &[f64]) -> Option<Vec<f64>> {
        match self {
            QFunction::Table {
                side,
                n_actions,
                values,
                ..
            } => {
                let s = Self::state_index(*side, state);
                Some(values.values[s * n_actions..(s + 1) * n_actions].to_vec())
            }
            QFunction::Twin { .. } => None,
        }
    }

    /// Soft target mix `θ ← (1−τ)·θ + τ·θ_online`, elementwise over every
    /// parameter block.
    pub fn soft_update_from(&mut self, online: &QFunction, tau: f64) -> Result<(), TrainerError> {
        let mix = |dst: &mut [f64], src: &[f64]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += tau * (s - *d);
            }
        };
        match (self, online) {
            (
                QFunction::Table { values: dst, .. },
                QFunction::Table { values: src, .. },
            ) if dst.len() == src.len() => {
                mix(&mut dst.values, &src.values);
                Ok(())
            }
            (
                QFunction::Twin {
                    q1: d1, q2: d2, ..
                },
                QFunction::Twin {
                    q1: s1, q2: s2, ..
                },
            ) if d1.len() == s1.len() && d2.len() == s2.len() => {
                mix(&mut d1.values, &s1.values);
                mix(&mut d2.values, &s2.values);
                Ok(())
            }
            (me, other) => Err(TrainerError::ModeMismatch {
                context: "QFunction::soft_update_from",
                expected: "matching value-function modes and shapes",
                detail: format!(
                    "target has {} params, online has {}",
                    me.n_params(),
                    other.n_params()
                ),
            }),
        }
    }
}

/// The interface the critic (and the collection loop) needs from a behavior
/// policy.
pub trait ActingPolicy {
    /// Stochastic draw used for collection and TD bootstrapping.
    fn sample_action(&self, state: &[f64], rng: &mut ChaCha8Rng) -> ActionVal;
    /// Deterministic evaluation-mode action.
    fn greedy_action(&self, state: &[f64]) -> ActionVal;
    /// `log π(a|s)` — exact in tabular mode, a Monte-Carlo marginal for the
    /// composed continuous policy.
    fn action_log_prob(
        &self,
        state: &[f64],
        action: &ActionVal,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, TrainerError>;
    /// The exact per-action distribution when one exists (tabular modes).
    fn action_distribution(&self, state: &[f64]) -> Option<Vec<f64>>;
}

impl ActingPolicy for DecoupledPolicy {
    fn sample_action(&self, state: &[f64], rng: &mut ChaCha8Rng) -> ActionVal {
        self.act(state, rng).0
    }

    fn greedy_action(&self, state: &[f64]) -> ActionVal {
        self.act_deterministic(state).0
    }

    fn action_log_prob(
        &self,
        state: &[f64],
        action: &ActionVal,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, TrainerError> {
        Ok(self.log_pi(state, action, MIN_MARGINAL_SAMPLES, rng)?)
    }

    fn action_distribution(&self, state: &[f64]) -> Option<Vec<f64>> {
        if self.is_tabular() {
            Some(self.compose_row(self.state_index(state)))
        } else {
            None
        }
    }
}

impl ActingPolicy for MonolithicPolicy {
    fn sample_action(&self, state: &[f64], rng: &mut ChaCha8Rng) -> ActionVal {
        self.sample(state, rng)
    }

    fn greedy_action(&self, state: &[f64]) -> ActionVal {
        self.mode(state)
    }

    fn action_log_prob(
        &self,
        state: &[f64],
        action: &ActionVal,
        _rng: &mut ChaCha8Rng,
    ) -> Result<f64, TrainerError> {
        Ok(self.log_prob(state, action))
    }

    fn action_distribution(&self, state: &[f64]) -> Option<Vec<f64>> {
        match self {
            MonolithicPolicy::TabularSoftmax { .. } => {
                Some(self.action_probs(self.state_index(state)))
            }
            MonolithicPolicy::Gaussian { .. } => None,
        }
    }
}

/// Discount and entropy weight of the soft Bellman operator.
#[derive(Debug, Clone, Copy)]
pub struct SoftQSettings {
    pub gamma: f64,
    pub entropy_weight: f64,
}

/// Bootstrapped regression targets
/// `y = r + γ(1−done)·(Q̄(s′,a′) − α·log π(a′|s′))`.
///
/// A tabular target takes the exact expectation over the policy's next-action
/// distribution (zero-probability actions contribute nothing); a twin target
/// draws one next action per element and evaluates the twin minimum.
pub fn td_targets(
    target: &QFunction,
    policy: &dyn ActingPolicy,
    batch: &[&Transition],
    rewards: &[f64],
    settings: &SoftQSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, TrainerError> {
    if batch.is_empty() {
        return Err(TrainerError::EmptyBatch {
            context: "td_targets",
        });
    }
    if rewards.len() != batch.len() {
        return Err(TrainerError::LengthMismatch {
            context: "td_targets rewards",
            expected: batch.len(),
            got: rewards.len(),
        });
    }
    let alpha = settings.entropy_weight;
    let mut out = Vec::with_capacity(batch.len());
    for (tr, &r) in batch.iter().zip(rewards) {
        let bootstrap = if tr.done {
            0.0
        } else {
            match target {
                QFunction::Table { n_actions, .. } => {
                    let probs = policy.action_distribution(&tr.next_state).ok_or(
                        TrainerError::ModeMismatch {
                            context: "td_targets",
                            expected: "a tabular policy for a tabular value function",
                            detail: "policy provides no exact action distribution".into(),
                        },
                    )?;
                    if probs.len() != *n_actions {
                        return Err(TrainerError::LengthMismatch {
                            context: "td_targets action distribution",
                            expected: *n_actions,
                            got: probs.len(),
                        });
                    }
                    let row = target
                        .table_row(&tr.next_state)
                        .expect("table mode has rows");
                    probs
                        .iter()
                        .zip(&row)
                        .filter(|(&p, _)| p > 0.0)
                        .map(|(&p, &q)| p * (q - alpha * p.ln()))
                        .sum()
                }
                QFunction::Twin { .. } => {
                    let a = policy.sample_action(&tr.next_state, rng);
                    let logp = policy.action_log_prob(&tr.next_state, &a, rng)?;
                    target.value(&tr.next_state, &a) - alpha * logp
                }
            }
        };
        let y = r + settings.gamma * bootstrap;
        if !y.is_finite() {
            return Err(TrainerError::NonFinite {
                context: "td_targets",
            });
        }
        out.push(y);
    }
    Ok(out)
}

/// Gradient of the TD regression, per parameter block.
#[derive(Debug, Clone)]
pub enum QGrad {
    Table(Vec<f64>),
    Twin(Vec<f64>, Vec<f64>),
}

/// Mean-squared regression of the online value function toward fixed
/// targets: `mean (Q(s,a) − y)²`, summed over both twins in continuous mode.
/// Deterministic given its inputs, which is what finite-difference
/// verification probes.
pub fn q_regression_loss_grad(
    q: &QFunction,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<(f64, QGrad), TrainerError> {
    if batch.is_empty() {
        return Err(TrainerError::EmptyBatch {
            context: "q_regression_loss_grad",
        });
    }
    if targets.len() != batch.len() {
        return Err(TrainerError::LengthMismatch {
            context: "q_regression_loss_grad targets",
            expected: batch.len(),
            got: targets.len(),
        });
    }
    match q {
        QFunction::Table {
            side,
            n_actions,
            values,
            ..
        } => {
            let inv_n = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            let mut grad = vec![0.0; values.len()];
            for (tr, &y) in batch.iter().zip(targets) {
                let idx = QFunction::state_index(*side, &tr.state) * n_actions
                    + tr.action.as_discrete();
                let diff = values.values[idx] - y;
                loss += diff * diff * inv_n;
                grad[idx] += 2.0 * diff * inv_n;
            }
            Ok((loss, QGrad::Table(grad)))
        }
        QFunction::Twin {
            state_dim,
            action_dim,
            net,
            q1,
            q2,
        } => {
            let b = batch.len();
            let mut inputs = Mat::zeros(b, state_dim + action_dim);
            let mut ys = Mat::zeros(b, 1);
            for (r, (tr, &y)) in batch.iter().zip(targets).enumerate() {
                if tr.state.len() != *state_dim {
                    return Err(TrainerError::LengthMismatch {
                        context: "q_regression_loss_grad state dim",
                        expected: *state_dim,
                        got: tr.state.len(),
                    });
                }
                let a = tr.action.as_continuous();
                if a.len() != *action_dim {
                    return Err(TrainerError::LengthMismatch {
                        context: "q_regression_loss_grad action dim",
                        expected: *action_dim,
                        got: a.len(),
                    });
                }
                for (d, &v) in tr.state.iter().chain(a).enumerate() {
                    inputs.set(r, d, v);
                }
                ys.set(r, 0, y);
            }
            let mut g = Graph::new();
            let x = g.constant(inputs);
            let y_const = g.constant(ys);
            let twin_loss = |g: &mut Graph, params: &ParamVector| {
                let binding = net.build(g, &params.values, x);
                let diff = g.sub(binding.output, y_const);
                let sq = g.mul(diff, diff);
                (g.mean_all(sq), binding)
            };
            let (l1, b1) = twin_loss(&mut g, q1);
            let (l2, b2) = twin_loss(&mut g, q2);
            let loss = g.add(l1, l2);
            let loss_val = g.value(loss).get(0, 0);
            if !loss_val.is_finite() {
                return Err(TrainerError::NonFinite {
                    context: "q_regression_loss_grad loss",
                });
            }
            let grads = g.backward(loss);
            let mut flat1 = vec![0.0; q1.len()];
            let mut flat2 = vec![0.0; q2.len()];
            net.accumulate_grads(&grads, &b1, &mut flat1);
            net.accumulate_grads(&grads, &b2, &mut flat2);
            Ok((loss_val, QGrad::Twin(flat1, flat2)))
        }
    }
}

enum QOpt {
    Table(Adam),
    Twin(Adam, Adam),
}

/// Online value function, its softly-mixed target copy, and optimizer state.
pub struct SoftQLearner {
    online: QFunction,
    target: QFunction,
    settings: SoftQSettings,
    tau: f64,
    opt: QOpt,
    updates: u64,
}

impl SoftQLearner {
    pub fn new(q: QFunction, lr: f64, tau: f64, settings: SoftQSettings) -> Self {
        let opt = match &q {
            QFunction::Table { values, .. } => QOpt::Table(Adam::new(lr, values.len())),
            QFunction::Twin { q1, q2, .. } => {
                QOpt::Twin(Adam::new(lr, q1.len()), Adam::new(lr, q2.len()))
            }
        };
        SoftQLearner {
            target: q.clone(),
            online: q,
            settings,
            tau,
            opt,
            updates: 0,
        }
    }

    pub fn online(&self) -> &QFunction {
        &self.online
    }

    /// Consume the learner, keeping only the online value function.
    pub fn into_online(self) -> QFunction {
        self.online
    }

    pub fn target(&self) -> &QFunction {
        &self.target
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn value(&self, state: &[f64], action: &ActionVal) -> f64 {
        self.online.value(state, action)
    }

    /// One temporal-difference step: build targets from the target network,
    /// regress the online network toward them, softly mix the target.
    /// Returns the regression loss.
    pub fn td_step(
        &mut self,
        batch: &[&Transition],
        rewards: &[f64],
        policy: &dyn ActingPolicy,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, TrainerError> {
        let targets = td_targets(&self.target, policy, batch, rewards, &self.settings, rng)?;
        let (loss, grad) = q_regression_loss_grad(&self.online, batch, &targets)?;
        let finite = |g: &[f64]| g.iter().all(|v| v.is_finite());
        match (&mut self.online, &mut self.opt, &grad) {
            (QFunction::Table { values, .. }, QOpt::Table(opt), QGrad::Table(g)) => {
                if !finite(g) {
                    return Err(TrainerError::NonFinite {
                        context: "soft-Q table gradient",
                    });
                }
                opt.step(&mut values.values, g);
            }
            (QFunction::Twin { q1, q2, .. }, QOpt::Twin(o1, o2), QGrad::Twin(g1, g2)) => {
                if !finite(g1) || !finite(g2) {
                    return Err(TrainerError::NonFinite {
                        context: "soft-Q twin gradient",
                    });
                }
                o1.step(&mut q1.values, g1);
                o2.step(&mut q2.values, g2);
            }
            _ => unreachable!("optimizer mode always matches the online function"),
        }
        self.target.soft_update_from(&self.online, self.tau)?;
        self.updates += 1;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{central_difference, max_rel_error};
    use crate::envs::GridWorld;
    use crate::mdp::{evaluate_policy_values, TabularPolicy};
    use rand::SeedableRng;

    fn grid_state(side: usize, idx: usize) -> Vec<f64> {
        vec![(idx % side) as f64, (idx / side) as f64]
    }

    #[test]
    fn table_layout_and_soft_update_follow_the_mixing_rule() {
        let mut online = QFunction::tabular(2, 3);
        if let QFunction::Table { values, .. } = &mut online {
            for (i, v) in values.values.iter_mut().enumerate() {
                *v = i as f64;
            }
        }
        // Cell (x=1, y=1) has index 3; action 2 reads entry 3·3+2 = 11.
        assert_eq!(online.value(&[1.0, 1.0], &ActionVal::Discrete(2)), 11.0);
        let mut target = QFunction::tabular(2, 3);
        target.soft_update_from(&online, 0.25).unwrap();
        assert_eq!(target.value(&[1.0, 1.0], &ActionVal::Discrete(2)), 0.25 * 11.0);
        target.soft_update_from(&online, 1.0).unwrap();
        assert_eq!(target.value(&[1.0, 1.0], &ActionVal::Discrete(2)), 11.0);
    }

    #[test]
    fn twin_value_is_the_minimum_of_both_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = QFunction::twin(2, 1, &[8], &mut rng);
        let (state, action) = ([0.3, -0.7], ActionVal::Continuous(vec![0.5]));
        if let QFunction::Twin { net, q1, q2, .. } = &q {
            let x = Mat::from_row(&[0.3, -0.7, 0.5]);
            let v1 = net.forward(&q1.values, &x).unwrap().get(0, 0);
            let v2 = net.forward(&q2.values, &x).unwrap().get(0, 0);
            assert_ne!(v1, v2, "independent inits should differ");
            assert_eq!(q.value(&state, &action), v1.min(v2));
        } else {
            unreachable!();
        }
    }

    #[test]
    fn zero_reward_and_zero_discount_drive_the_table_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut q = QFunction::tabular(2, 2);
        if let QFunction::Table { values, .. } = &mut q {
            for v in &mut values.values {
                *v = rng.random_range(-3.0..3.0);
            }
        }
        let mut learner = SoftQLearner::new(
            q,
            0.05,
            1.0,
            SoftQSettings {
                gamma: 0.0,
                entropy_weight: 0.2,
            },
        );
        let policy = MonolithicPolicy::tabular(2, 2);
        let batch: Vec<Transition> = (0..4)
            .flat_map(|s| {
                (0..2).map(move |a| Transition {
                    state: grid_state(2, s),
                    action: ActionVal::Discrete(a),
                    next_state: grid_state(2, (s + 1) % 4),
                    reward: 0.0,
                    done: false,
                })
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let rewards = vec![0.0; refs.len()];
        for _ in 0..2000 {
            learner
                .td_step(&refs, &rewards, &policy, &mut rng)
                .unwrap();
        }
        if let QFunction::Table { values, .. } = learner.online() {
            let worst = values.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(worst < 1e-3, "max |Q| = {worst}");
        }
    }

    #[test]
    fn tabular_td_converges_to_exact_policy_evaluation_values() {
        // Fixed uniform policy on the 6×6 grid, no entropy, hard target
        // updates, exact expected backups over the full (s,a) sweep: the
        // unique fixed point is the policy's exact action-value function,
        // computed independently by linear solve.
        let grid = GridWorld::new(1);
        let gamma = 0.9;
        let mdp = grid.to_finite_mdp(gamma);
        let uniform = TabularPolicy::uniform(36, 4);
        let v = evaluate_policy_values(&mdp, &uniform).unwrap();
        let goal_idx = grid.index_of(grid.goal);
        let mut q_exact = vec![0.0; 36 * 4];
        for s in 0..36 {
            for a in 0..4 {
                let next = grid.index_of(grid.step_cell(grid.cell_of(s), a));
                let r = if next == goal_idx { 1.0 } else { 0.0 };
                q_exact[s * 4 + a] = r + gamma * v[next];
            }
        }

        let batch: Vec<Transition> = (0..36)
            .flat_map(|s| {
                let grid = &grid;
                (0..4).map(move |a| {
                    let next = grid.index_of(grid.step_cell(grid.cell_of(s), a));
                    Transition {
                        state: grid_state(6, s),
                        action: ActionVal::Discrete(a),
                        next_state: grid_state(6, next),
                        reward: if next == goal_idx { 1.0 } else { 0.0 },
                        done: false,
                    }
                })
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let policy = MonolithicPolicy::tabular(6, 4); // zero logits = uniform
        let mut learner = SoftQLearner::new(
            QFunction::tabular(6, 4),
            0.3,
            1.0,
            SoftQSettings {
                gamma,
                entropy_weight: 0.0,
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..4000 {
            learner
                .td_step(&refs, &rewards, &policy, &mut rng)
                .unwrap();
        }
        if let QFunction::Table { values, .. } = learner.online() {
            let worst = values
                .values
                .iter()
                .zip(&q_exact)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(worst < 1e-3, "max |Q − Q_π| = {worst}");
        }
    }

    #[test]
    fn table_regression_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut q = QFunction::tabular(3, 2);
        if let QFunction::Table { values, .. } = &mut q {
            for v in &mut values.values {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let batch: Vec<Transition> = (0..10)
            .map(|i| Transition {
                state: grid_state(3, i % 9),
                action: ActionVal::Discrete(i % 2),
                next_state: grid_state(3, (i + 1) % 9),
                reward: 0.0,
                done: false,
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let targets: Vec<f64> = (0..10).map(|i| (i as f64) * 0.37 - 2.0).collect();
        let (_, grad) = q_regression_loss_grad(&q, &refs, &targets).unwrap();
        let QGrad::Table(grad) = grad else {
            unreachable!()
        };
        let center = match &q {
            QFunction::Table { values, .. } => values.values.clone(),
            _ => unreachable!(),
        };
        let fd = central_difference(
            |vals| {
                let mut probe = q.clone();
                if let QFunction::Table { values, .. } = &mut probe {
                    values.values.copy_from_slice(vals);
                }
                q_regression_loss_grad(&probe, &refs, &targets).unwrap().0
            },
            &center,
            1e-5,
        );
        assert!(max_rel_error(&grad, &fd) <= 1e-4);
    }

    #[test]
    fn twin_regression_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = QFunction::twin(3, 2, &[6], &mut rng);
        let batch: Vec<Transition> = (0..8)
            .map(|i| Transition {
                state: vec![0.1 * i as f64, -0.2, 0.3],
                action: ActionVal::Continuous(vec![0.05 * i as f64, -0.4]),
                next_state: vec![0.0; 3],
                reward: 0.0,
                done: false,
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let targets: Vec<f64> = (0..8).map(|i| 0.5 - 0.2 * i as f64).collect();
        let (_, grad) = q_regression_loss_grad(&q, &refs, &targets).unwrap();
        let QGrad::Twin(g1, g2) = grad else {
            unreachable!()
        };
        let grad_cat: Vec<f64> = g1.into_iter().chain(g2).collect();
        let (n1, center) = match &q {
            QFunction::Twin { q1, q2, .. } => (
                q1.len(),
                q1.values.iter().chain(&q2.values).cloned().collect::<Vec<_>>(),
            ),
            _ => unreachable!(),
        };
        let fd = central_difference(
            |vals| {
                let mut probe = q.clone();
                if let QFunction::Twin { q1, q2, .. } = &mut probe {
                    q1.values.copy_from_slice(&vals[..n1]);
                    q2.values.copy_from_slice(&vals[n1..]);
                }
                q_regression_loss_grad(&probe, &refs, &targets).unwrap().0
            },
            &center,
            1e-5,
        );
        assert!(max_rel_error(&grad_cat, &fd) <= 1e-4);
    }

    #[test]
    fn tabular_targets_require_an_exact_action_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = QFunction::tabular(2, 2);
        let gaussian = MonolithicPolicy::gaussian(2, 2, &[4], &mut rng);
        let tr = Transition {
            state: vec![0.0, 0.0],
            action: ActionVal::Discrete(0),
            next_state: vec![1.0, 0.0],
            reward: 0.0,
            done: false,
        };
        let err = td_targets(
            &q,
            &gaussian,
            &[&tr],
            &[0.0],
            &SoftQSettings {
                gamma: 0.99,
                entropy_weight: 0.2,
            },
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, TrainerError::ModeMismatch { .. }));
    }

    #[test]
    fn done_flag_cuts_the_bootstrap_term() {
        let q = QFunction::tabular(2, 2);
        let policy = MonolithicPolicy::tabular(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mk = |done| Transition {
            state: vec![0.0, 0.0],
            action: ActionVal::Discrete(0),
            next_state: vec![1.0, 1.0],
            reward: 0.0,
            done,
        };
        let (t_done, t_cont) = (mk(true), mk(false));
        let settings = SoftQSettings {
            gamma: 0.5,
            entropy_weight: 0.2,
        };
        let y = td_targets(&q, &policy, &[&t_done, &t_cont], &[3.0, 3.0], &settings, &mut rng)
            .unwrap();
        assert_eq!(y[0], 3.0, "terminal target is the reward alone");
        // Continuing: uniform policy over 2 zero-valued actions adds the
        // entropy bonus −α·ln½ under the expectation.
        let expected = 3.0 + 0.5 * (0.2 * f64::ln(2.0));
        assert!((y[1] - expected).abs() < 1e-12);
    }
}
