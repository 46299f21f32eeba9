//! Soft policy-improvement steps against a value function.
//!
//! Both updates minimize the entropy-regularized objective
//! `E_s[ α·log π(a|s) − Q(s,a) ]`:
//!
//! * [`monolithic_actor_grad`] improves a monolithic state-to-action policy
//!   — exactly (full expectation over actions) in tabular mode,
//!   reparameterized with the twin-minimum value in continuous mode;
//! * [`composed_actor_grad`] pushes the same objective through the
//!   *composed* decoupled policy, so gradients reach both the planner and
//!   the inverse dynamics. This is the end-to-end training mode of the
//!   decoupled architecture that uses no planner-specific objective.
//!
//! In continuous mode the log-density term is written in noise form
//! (`log N(μ+σε; μ, σ) = −½ε² − log σ − ½ln 2π`, an identity in the
//! parameters), so the whole objective is a deterministic function of the
//! frozen noise draws — the `*_core` functions expose exactly that map for
//! finite-difference verification. The composed continuous update treats
//! the pair `(ŝ′, a)` hierarchically and regularizes the joint log-density
//! `log h(ŝ′|s) + log I(a|s,ŝ′)`, since the composed marginal has no
//! closed form.

use super::soft_q::QFunction;
use super::TrainerError;
use crate::approx::{standard_normal, Graph, Mat, NodeId};
use crate::depo::{ContinuousDecoupled, DecoupledPolicy, MonolithicPolicy, LOGITS_SLICE};
use rand_chacha::ChaCha8Rng;

const LN_2PI: f64 = 1.837877066409345483560659472811;

fn check_loss(loss: f64, context: &'static str) -> Result<(), TrainerError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(TrainerError::NonFinite { context })
    }
}

fn state_matrix(states: &[&[f64]], dim: usize, context: &'static str) -> Result<Mat, TrainerError> {
    let mut m = Mat::zeros(states.len(), dim);
    for (r, s) in states.iter().enumerate() {
        if s.len() != dim {
            return Err(TrainerError::LengthMismatch {
                context,
                expected: dim,
                got: s.len(),
            });
        }
        for (d, &v) in s.iter().enumerate() {
            m.set(r, d, v);
        }
    }
    Ok(m)
}

fn draw_noise(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let mut eps = Mat::zeros(rows, cols);
    for r in 0..rows {
        for d in 0..cols {
            eps.set(r, d, standard_normal(rng));
        }
    }
    eps
}

fn check_noise(eps: &Mat, rows: usize, cols: usize, context: &'static str) -> Result<(), TrainerError> {
    if eps.rows() != rows || eps.cols() != cols {
        return Err(TrainerError::LengthMismatch {
            context,
            expected: rows * cols,
            got: eps.rows() * eps.cols(),
        });
    }
    Ok(())
}

/// Noise-form log-density column `Σ_d(−½ε_d² − ½ln 2π) − Σ_d log_std_d` of a
/// diagonal Gaussian sampled as `μ + exp(log_std)·ε`.
fn noise_form_log_density(g: &mut Graph, log_std: NodeId, eps: &Mat) -> NodeId {
    let rows = eps.rows();
    let mut const_part = Mat::zeros(rows, 1);
    for r in 0..rows {
        let s: f64 = eps
            .row(r)
            .iter()
            .map(|&e| -0.5 * e * e - 0.5 * LN_2PI)
            .sum();
        const_part.set(r, 0, s);
    }
    let c = g.constant(const_part);
    let ls_sum = g.row_sum(log_std);
    let neg_ls = g.affine(ls_sum, -1.0, 0.0);
    g.add(c, neg_ls)
}

/// Tape fragment for the twin-minimum value of `(s, a)` rows already on the
/// tape; the twin parameters become leaves whose gradients are simply never
/// read.
fn twin_min_on_tape(
    g: &mut Graph,
    q: &QFunction,
    sa: NodeId,
) -> Result<NodeId, TrainerError> {
    let QFunction::Twin { net, q1, q2, .. } = q else {
        return Err(TrainerError::ModeMismatch {
            context: "actor twin value",
            expected: "twin value networks for a continuous policy",
            detail: "got a tabular value function".into(),
        });
    };
    let b1 = net.build(g, &q1.values, sa);
    let b2 = net.build(g, &q2.values, sa);
    Ok(g.min(b1.output, b2.output))
}

/// One soft improvement gradient for a monolithic policy. Returns
/// `(loss, gradient over the policy parameters)`; the value function is
/// read-only. Tabular mode pairs with a tabular value function and takes
/// the exact expectation over actions; Gaussian mode pairs with twin
/// networks and draws one reparameterized action per state.
pub fn monolithic_actor_grad(
    policy: &MonolithicPolicy,
    q: &QFunction,
    states: &[&[f64]],
    entropy_weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>), TrainerError> {
    if states.is_empty() {
        return Err(TrainerError::EmptyBatch {
            context: "monolithic_actor_grad",
        });
    }
    match policy {
        MonolithicPolicy::TabularSoftmax { .. } => {
            tabular_monolithic_core(policy, q, states, entropy_weight)
        }
        MonolithicPolicy::Gaussian { action_dim, .. } => {
            let eps = draw_noise(states.len(), *action_dim, rng);
            gaussian_actor_core(policy, q, states, entropy_weight, &eps)
        }
    }
}

fn tabular_monolithic_core(
    policy: &MonolithicPolicy,
    q: &QFunction,
    states: &[&[f64]],
    entropy_weight: f64,
) -> Result<(f64, Vec<f64>), TrainerError> {
    let MonolithicPolicy::TabularSoftmax {
        n_states,
        n_actions,
        params,
        ..
    } = policy
    else {
        unreachable!("caller matched the tabular variant");
    };
    let Some(q_rows) = states
        .iter()
        .map(|s| q.table_row(s))
        .collect::<Option<Vec<_>>>()
    else {
        return Err(TrainerError::ModeMismatch {
            context: "monolithic_actor_grad",
            expected: "a tabular value function for a tabular policy",
            detail: "twin networks provide no action-value rows".into(),
        });
    };
    if q_rows[0].len() != *n_actions {
        return Err(TrainerError::LengthMismatch {
            context: "monolithic_actor_grad action count",
            expected: *n_actions,
            got: q_rows[0].len(),
        });
    }
    let s_indices: Vec<usize> = states.iter().map(|s| policy.state_index(s)).collect();
    let mut g = Graph::new();
    let logits = g.param(params.slice(LOGITS_SLICE)?, *n_states, *n_actions);
    let rows = g.gather_rows(logits, s_indices);
    let lsm = g.log_softmax_rows(rows);
    let pi = g.exp(lsm);
    let q_const = g.constant(Mat::from_rows(&q_rows));
    let scaled_lsm = g.affine(lsm, entropy_weight, 0.0);
    let inner = g.sub(q_const, scaled_lsm);
    let weighted = g.mul(pi, inner);
    let per_state = g.row_sum(weighted);
    let neg = g.affine(per_state, -1.0, 0.0);
    let loss = g.mean_all(neg);
    let loss_val = g.value(loss).get(0, 0);
    check_loss(loss_val, "monolithic_actor_grad loss")?;
    let grads = g.backward(loss);
    let flat = grads
        .wrt_dense(logits, *n_states, *n_actions)
        .data()
        .to_vec();
    Ok((loss_val, flat))
}

/// Deterministic core of the continuous monolithic update: the caller owns
/// the action noise, making this a pure map from policy parameters to
/// `(loss, gradient)`.
pub fn gaussian_actor_core(
    policy: &MonolithicPolicy,
    q: &QFunction,
    states: &[&[f64]],
    entropy_weight: f64,
    eps: &Mat,
) -> Result<(f64, Vec<f64>), TrainerError> {
    let MonolithicPolicy::Gaussian {
        state_dim,
        action_dim,
        head,
        params,
    } = policy
    else {
        return Err(TrainerError::ModeMismatch {
            context: "gaussian_actor_core",
            expected: "a Gaussian monolithic policy",
            detail: "got the tabular variant".into(),
        });
    };
    if states.is_empty() {
        return Err(TrainerError::EmptyBatch {
            context: "gaussian_actor_core",
        });
    }
    check_noise(eps, states.len(), *action_dim, "gaussian_actor_core noise")?;
    let inputs = state_matrix(states, *state_dim, "gaussian_actor_core state dim")?;
    let mut g = Graph::new();
    let s = g.constant(inputs);
    let (mean, log_std, binding) = head.build(&mut g, &params.values, s);
    let e = g.constant(eps.clone());
    let std = g.exp(log_std);
    let noise = g.mul(std, e);
    let action = g.add(mean, noise);
    let log_pi = noise_form_log_density(&mut g, log_std, eps);
    let sa = g.concat_cols(s, action);
    let q_min = twin_min_on_tape(&mut g, q, sa)?;
    let scaled_logp = g.affine(log_pi, entropy_weight, 0.0);
    let obj = g.sub(scaled_logp, q_min);
    let loss = g.mean_all(obj);
    let loss_val = g.value(loss).get(0, 0);
    check_loss(loss_val, "gaussian_actor_core loss")?;
    let grads = g.backward(loss);
    let mut flat = vec![0.0; params.len()];
    head.net.accumulate_grads(&grads, &binding, &mut flat);
    Ok((loss_val, flat))
}

/// Gradient of the soft improvement objective through the composed
/// decoupled policy, with respect to both halves.
#[derive(Debug, Clone)]
pub struct ComposedActorGrad {
    pub loss: f64,
    pub planner: Vec<f64>,
    pub invdyn: Vec<f64>,
}

/// Soft policy improvement through the *composition* `plan, then act`:
/// tabular mode differentiates the exact composed distribution
/// `π(a|s) = Σ_σ h(σ|s)·I(a|s,σ)`; continuous mode reparameterizes both
/// stages and regularizes the joint log-density. Gradients flow into the
/// planner and the inverse dynamics alike.
pub fn composed_actor_grad(
    policy: &DecoupledPolicy,
    q: &QFunction,
    states: &[&[f64]],
    entropy_weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ComposedActorGrad, TrainerError> {
    if states.is_empty() {
        return Err(TrainerError::EmptyBatch {
            context: "composed_actor_grad",
        });
    }
    match policy {
        DecoupledPolicy::Tabular(_) => composed_tabular_core(policy, q, states, entropy_weight),
        DecoupledPolicy::Continuous(c) => {
            let eps_plan = draw_noise(states.len(), c.state_dim, rng);
            let eps_act = draw_noise(states.len(), c.action_dim, rng);
            composed_gaussian_actor_core(c, q, states, entropy_weight, &eps_plan, &eps_act)
        }
    }
}

fn composed_tabular_core(
    policy: &DecoupledPolicy,
    q: &QFunction,
    states: &[&[f64]],
    entropy_weight: f64,
) -> Result<ComposedActorGrad, TrainerError> {
    let DecoupledPolicy::Tabular(t) = policy else {
        unreachable!("caller matched the tabular variant");
    };
    let Some(q_rows) = states
        .iter()
        .map(|s| q.table_row(s))
        .collect::<Option<Vec<_>>>()
    else {
        return Err(TrainerError::ModeMismatch {
            context: "composed_actor_grad",
            expected: "a tabular value function for a tabular policy",
            detail: "twin networks provide no action-value rows".into(),
        });
    };
    if q_rows[0].len() != t.n_actions {
        return Err(TrainerError::LengthMismatch {
            context: "composed_actor_grad action count",
            expected: t.n_actions,
            got: q_rows[0].len(),
        });
    }
    let b = states.len();
    let n = t.n_states;
    let s_indices: Vec<usize> = states.iter().map(|s| policy.state_index(s)).collect();
    // Pair rows (s_b, σ) for every batch element and candidate successor.
    let pair_indices: Vec<usize> = s_indices
        .iter()
        .flat_map(|&s| (0..n).map(move |sigma| s * n + sigma))
        .collect();
    // Block-diagonal selector summing each element's successor block:
    // sel[b, b·n + σ] = 1.
    let mut sel = Mat::zeros(b, b * n);
    for i in 0..b {
        for sigma in 0..n {
            sel.set(i, i * n + sigma, 1.0);
        }
    }
    let mut g = Graph::new();
    let planner_logits = g.param(t.planner.slice(LOGITS_SLICE)?, n, n);
    let invdyn_logits = g.param(t.invdyn.slice(LOGITS_SLICE)?, n * n, t.n_actions);
    let h_rows_raw = g.gather_rows(planner_logits, s_indices);
    let h_lsm = g.log_softmax_rows(h_rows_raw);
    let h = g.exp(h_lsm); // B×n planner probabilities
    let i_rows_raw = g.gather_rows(invdyn_logits, pair_indices);
    let i_lsm = g.log_softmax_rows(i_rows_raw);
    let i_probs = g.exp(i_lsm); // (B·n)×A inverse-dynamics probabilities
    let h_col = g.reshape(h, b * n, 1);
    let ones = g.constant(Mat::from_vec(1, t.n_actions, vec![1.0; t.n_actions]));
    let h_exp = g.matmul(h_col, ones); // (B·n)×A, h broadcast over actions
    let weighted = g.mul(i_probs, h_exp);
    let sel_const = g.constant(sel);
    let pi = g.matmul(sel_const, weighted); // B×A composed probabilities
    let ln_pi = g.ln(pi);
    let q_const = g.constant(Mat::from_rows(&q_rows));
    let scaled_ln = g.affine(ln_pi, entropy_weight, 0.0);
    let inner = g.sub(q_const, scaled_ln);
    let obj = g.mul(pi, inner);
    let per_state = g.row_sum(obj);
    let neg = g.affine(per_state, -1.0, 0.0);
    let loss = g.mean_all(neg);
    let loss_val = g.value(loss).get(0, 0);
    check_loss(loss_val, "composed_actor_grad loss")?;
    let grads = g.backward(loss);
    let planner = grads.wrt_dense(planner_logits, n, n).data().to_vec();
    let invdyn = grads
        .wrt_dense(invdyn_logits, n * n, t.n_actions)
        .data()
        .to_vec();
    Ok(ComposedActorGrad {
        loss: loss_val,
        planner,
        invdyn,
    })
}

/// Deterministic core of the continuous composed update: the caller owns
/// both noise draws (planner and action stages).
pub fn composed_gaussian_actor_core(
    c: &ContinuousDecoupled,
    q: &QFunction,
    states: &[&[f64]],
    entropy_weight: f64,
    eps_plan: &Mat,
    eps_act: &Mat,
) -> Result<ComposedActorGrad, TrainerError> {
    if states.is_empty() {
        return Err(TrainerError::EmptyBatch {
            context: "composed_gaussian_actor_core",
        });
    }
    check_noise(
        eps_plan,
        states.len(),
        c.state_dim,
        "composed actor planner noise",
    )?;
    check_noise(
        eps_act,
        states.len(),
        c.action_dim,
        "composed actor action noise",
    )?;
    let inputs = state_matrix(states, c.state_dim, "composed actor state dim")?;
    let mut g = Graph::new();
    let s = g.constant(inputs);
    let (h_mean, h_log_std, h_binding) = c.planner_head.build(&mut g, &c.planner.values, s);
    let e1 = g.constant(eps_plan.clone());
    let h_std = g.exp(h_log_std);
    let h_noise = g.mul(h_std, e1);
    let planned = g.add(h_mean, h_noise);
    let log_h = noise_form_log_density(&mut g, h_log_std, eps_plan);
    let inv_in = g.concat_cols(s, planned);
    let (a_mean, a_log_std, i_binding) = c.invdyn_head.build(&mut g, &c.invdyn.values, inv_in);
    let e2 = g.constant(eps_act.clone());
    let a_std = g.exp(a_log_std);
    let a_noise = g.mul(a_std, e2);
    let action = g.add(a_mean, a_noise);
    let log_i = noise_form_log_density(&mut g, a_log_std, eps_act);
    let sa = g.concat_cols(s, action);
    let q_min = twin_min_on_tape(&mut g, q, sa)?;
    let log_joint = g.add(log_h, log_i);
    let scaled = g.affine(log_joint, entropy_weight, 0.0);
    let obj = g.sub(scaled, q_min);
    let loss = g.mean_all(obj);
    let loss_val = g.value(loss).get(0, 0);
    check_loss(loss_val, "composed_gaussian_actor_core loss")?;
    let grads = g.backward(loss);
    let mut planner = vec![0.0; c.planner.len()];
    let mut invdyn = vec![0.0; c.invdyn.len()];
    c.planner_head
        .net
        .accumulate_grads(&grads, &h_binding, &mut planner);
    c.invdyn_head
        .net
        .accumulate_grads(&grads, &i_binding, &mut invdyn);
    Ok(ComposedActorGrad {
        loss: loss_val,
        planner,
        invdyn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{central_difference, max_rel_error, Adam};
    use rand::{Rng, SeedableRng};

    fn grid_states(side: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                let idx = rng.random_range(0..side * side);
                vec![(idx % side) as f64, (idx / side) as f64]
            })
            .collect()
    }

    fn random_table(side: usize, n_actions: usize, rng: &mut ChaCha8Rng) -> QFunction {
        let mut q = QFunction::tabular(side, n_actions);
        if let QFunction::Table { values, .. } = &mut q {
            for v in &mut values.values {
                *v = rng.random_range(-2.0..2.0);
            }
        }
        q
    }

    #[test]
    fn tabular_monolithic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut policy = MonolithicPolicy::tabular(3, 4);
        for v in &mut policy.params_mut().values {
            *v = rng.random_range(-1.0..1.0);
        }
        let q = random_table(3, 4, &mut rng);
        let states = grid_states(3, 9, &mut rng);
        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let (_, grad) =
            monolithic_actor_grad(&policy, &q, &refs, 0.2, &mut rng).unwrap();
        let center = policy.params().values.clone();
        let fd = central_difference(
            |vals| {
                let mut p = policy.clone();
                p.params_mut().values.copy_from_slice(vals);
                let mut r2 = ChaCha8Rng::seed_from_u64(0);
                monolithic_actor_grad(&p, &q, &refs, 0.2, &mut r2).unwrap().0
            },
            &center,
            1e-5,
        );
        assert!(max_rel_error(&grad, &fd) <= 1e-4);
    }

    #[test]
    fn gaussian_monolithic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let policy = MonolithicPolicy::gaussian(3, 2, &[6], &mut rng);
        let q = QFunction::twin(3, 2, &[5], &mut rng);
        let states: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![0.2 * i as f64 - 0.5, 0.3, -0.1 * i as f64])
            .collect();
        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let eps = draw_noise(refs.len(), 2, &mut rng);
        let (_, grad) = gaussian_actor_core(&policy, &q, &refs, 0.2, &eps).unwrap();
        let center = policy.params().values.clone();
        let fd = central_difference(
            |vals| {
                let mut p = policy.clone();
                p.params_mut().values.copy_from_slice(vals);
                gaussian_actor_core(&p, &q, &refs, 0.2, &eps).unwrap().0
            },
            &center,
            1e-5,
        );
        assert!(max_rel_error(&grad, &fd) <= 1e-4);
    }

    #[test]
    fn composed_tabular_gradient_matches_finite_differences_for_both_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut policy = DecoupledPolicy::tabular(2, 3);
        for v in &mut policy.planner_params_mut().values {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in &mut policy.invdyn_params_mut().values {
            *v = rng.random_range(-1.0..1.0);
        }
        let q = random_table(2, 3, &mut rng);
        let states = grid_states(2, 6, &mut rng);
        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let report = composed_actor_grad(&policy, &q, &refs, 0.2, &mut rng).unwrap();
        let n_psi = policy.planner_params().len();
        let center: Vec<f64> = policy
            .planner_params()
            .values
            .iter()
            .chain(&policy.invdyn_params().values)
            .cloned()
            .collect();
        let grad_cat: Vec<f64> = report
            .planner
            .iter()
            .chain(&report.invdyn)
            .cloned()
            .collect();
        let fd = central_difference(
            |vals| {
                let mut p = policy.clone();
                p.planner_params_mut().values.copy_from_slice(&vals[..n_psi]);
                p.invdyn_params_mut().values.copy_from_slice(&vals[n_psi..]);
                let mut r2 = ChaCha8Rng::seed_from_u64(0);
                composed_actor_grad(&p, &q, &refs, 0.2, &mut r2).unwrap().loss
            },
            &center,
            1e-5,
        );
        assert!(max_rel_error(&grad_cat, &fd) <= 1e-4);
    }

    #[test]
    fn composed_gaussian_gradient_matches_finite_differences_for_both_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let policy = DecoupledPolicy::continuous(3, 2, &[6], &[6], &mut rng);
        let DecoupledPolicy::Continuous(c) = &policy else {
            unreachable!()
        };
        let q = QFunction::twin(3, 2, &[5], &mut rng);
        let states: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![0.1 * i as f64, -0.2, 0.05 * i as f64 + 0.3])
            .collect();
        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let eps_plan = draw_noise(refs.len(), 3, &mut rng);
        let eps_act = draw_noise(refs.len(), 2, &mut rng);
        let report =
            composed_gaussian_actor_core(c, &q, &refs, 0.2, &eps_plan, &eps_act).unwrap();
        let n_psi = c.planner.len();
        let center: Vec<f64> = c
            .planner
            .values
            .iter()
            .chain(&c.invdyn.values)
            .cloned()
            .collect();
        let grad_cat: Vec<f64> = report
            .planner
            .iter()
            .chain(&report.invdyn)
            .cloned()
            .collect();
        let fd = central_difference(
            |vals| {
                let mut p = policy.clone();
                p.planner_params_mut().values.copy_from_slice(&vals[..n_psi]);
                p.invdyn_params_mut().values.copy_from_slice(&vals[n_psi..]);
                let DecoupledPolicy::Continuous(pc) = &p else {
                    unreachable!()
                };
                composed_gaussian_actor_core(pc, &q, &refs, 0.2, &eps_plan, &eps_act)
                    .unwrap()
                    .loss
            },
            &center,
            1e-5,
        );
        assert!(max_rel_error(&grad_cat, &fd) <= 1e-4);
    }

    fn all_states(side: usize) -> Vec<Vec<f64>> {
        (0..side * side)
            .map(|idx| vec![(idx % side) as f64, (idx / side) as f64])
            .collect()
    }

    #[test]
    fn tabular_improvement_concentrates_on_the_best_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let policy_states = all_states(2);
        let refs: Vec<&[f64]> = policy_states.iter().map(Vec::as_slice).collect();
        let mut q = QFunction::tabular(2, 3);
        if let QFunction::Table { values, .. } = &mut q {
            // Action 2 is best everywhere by a margin of 1.
            for s in 0..4 {
                values.values[s * 3 + 2] = 1.0;
            }
        }
        let mut policy = MonolithicPolicy::tabular(2, 3);
        let mut opt = Adam::new(0.1, policy.params().len());
        for _ in 0..300 {
            let (_, grad) =
                monolithic_actor_grad(&policy, &q, &refs, 0.05, &mut rng).unwrap();
            opt.step(&mut policy.params_mut().values, &grad);
        }
        for s in 0..4 {
            let probs = policy.action_probs(s);
            assert!(
                probs[2] > 0.9,
                "state {s} should prefer action 2, got {probs:?}"
            );
        }
    }

    #[test]
    fn composed_improvement_reaches_the_best_action_through_both_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let states = all_states(2);
        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let mut q = QFunction::tabular(2, 2);
        if let QFunction::Table { values, .. } = &mut q {
            for s in 0..4 {
                values.values[s * 2 + 1] = 1.0;
            }
        }
        let mut policy = DecoupledPolicy::tabular(2, 2);
        let mut opt_psi = Adam::new(0.1, policy.planner_params().len());
        let mut opt_phi = Adam::new(0.1, policy.invdyn_params().len());
        for _ in 0..400 {
            let report = composed_actor_grad(&policy, &q, &refs, 0.05, &mut rng).unwrap();
            opt_psi.step(&mut policy.planner_params_mut().values, &report.planner);
            opt_phi.step(&mut policy.invdyn_params_mut().values, &report.invdyn);
        }
        for s in 0..4 {
            let row = policy.compose_row(s);
            assert!(
                row[1] > 0.9,
                "state {s} should compose onto action 1, got {row:?}"
            );
        }
    }

    #[test]
    fn mismatched_modes_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let tab_policy = MonolithicPolicy::tabular(2, 2);
        let twin = QFunction::twin(2, 2, &[4], &mut rng);
        let s = [0.0, 0.0];
        let refs: Vec<&[f64]> = vec![&s];
        assert!(matches!(
            monolithic_actor_grad(&tab_policy, &twin, &refs, 0.2, &mut rng),
            Err(TrainerError::ModeMismatch { .. })
        ));
        let table = QFunction::tabular(2, 2);
        let gauss = MonolithicPolicy::gaussian(2, 2, &[4], &mut rng);
        assert!(matches!(
            monolithic_actor_grad(&gauss, &table, &refs, 0.2, &mut rng),
            Err(TrainerError::ModeMismatch { .. })
        ));
        assert!(matches!(
            monolithic_actor_grad(&tab_policy, &table, &[], 0.2, &mut rng),
            Err(TrainerError::EmptyBatch { .. })
        ));
    }
}
