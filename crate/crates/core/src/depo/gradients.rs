//! Gradient estimators that train the two policy modules.
//!
//! Inverse dynamics and the supervised planner loss are maximum-likelihood
//! objectives. The decoupled policy gradient (DePG) pushes the planner toward
//! high-value successors through the frozen inverse dynamics, importance-
//! weighted by `Q(s,a)/π(a|s)`; the calibrated variant (CDePG) instead
//! re-anchors the planner on successors the environment actually produced,
//! weighted by batch-normalized Q. The combined update adds the pieces as
//! `depg + λ_h·(supervised + cdepg)` and steps the planner parameters only.

use super::policy::LOGITS_SLICE;
use super::{ContinuousDecoupled, DecoupledPolicy, DepoError, TabularDecoupled};
use crate::approx::{standard_normal, Adam, Graph, Mat};
use crate::envs::Transition;
use rand::Rng;

/// Composed-policy probabilities below this are treated as support collapse:
/// the importance weight `Q/π` would explode, so the update refuses to
/// proceed rather than silently producing a huge step.
pub const POLICY_PROB_FLOOR: f64 = 1e-8;

/// Default symmetric clip applied to the importance weight `Q/π`.
pub const DEFAULT_IMPORTANCE_CLIP: f64 = 50.0;

/// Knobs for planner updates. `lambda_h` trades the policy-gradient term
/// against the two calibration terms; the `use_*` flags select algorithm
/// variants (supervised-only, agnostic DePG, full combination).
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerUpdateSpec {
    pub lambda_h: f64,
    pub use_depg: bool,
    pub use_supervised: bool,
    pub use_cdepg: bool,
    /// Symmetric bound on the importance weight `Q/π`.
    pub importance_clip: f64,
    /// Minimum composed probability before the update errors out.
    pub prob_floor: f64,
    /// Planner samples for the Monte-Carlo marginal `π(a|s)` in continuous
    /// mode (raised to [`super::MIN_MARGINAL_SAMPLES`] if lower).
    pub n_pi_samples: usize,
}

impl Default for PlannerUpdateSpec {
    fn default() -> Self {
        PlannerUpdateSpec {
            lambda_h: 1.0,
            use_depg: true,
            use_supervised: true,
            use_cdepg: true,
            importance_clip: DEFAULT_IMPORTANCE_CLIP,
            prob_floor: POLICY_PROB_FLOOR,
            n_pi_samples: super::MIN_MARGINAL_SAMPLES,
        }
    }
}

/// The three planner-gradient components of one update plus their weighted
/// combination; `combined = depg + λ_h·(supervised + cdepg)` exactly, term by
/// term in `f64`, so reruns and aggregation checks can compare bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub depg: Vec<f64>,
    pub supervised: Vec<f64>,
    pub cdepg: Vec<f64>,
    pub combined: Vec<f64>,
    pub depg_loss: f64,
    pub supervised_loss: f64,
    pub cdepg_loss: f64,
}

/// Batch negative log-likelihood of taken actions under `I_φ(a|s,s')` and its
/// gradient with respect to the inverse-dynamics parameters.
pub fn inverse_dynamics_loss_grad(
    policy: &DecoupledPolicy,
    batch: &[&Transition],
) -> Result<(f64, Vec<f64>), DepoError> {
    if batch.is_empty() {
        return Err(DepoError::EmptyBatch {
            context: "inverse_dynamics_loss_grad",
        });
    }
    match policy {
        DecoupledPolicy::Tabular(t) => {
            let mut g = Graph::new();
            let logits = g.param(
                t.invdyn.slice(LOGITS_SLICE)?,
                t.n_states * t.n_states,
                t.n_actions,
            );
            let pair_rows: Vec<usize> = batch
                .iter()
                .map(|tr| {
                    policy.state_index(&tr.state) * t.n_states
                        + policy.state_index(&tr.next_state)
                })
                .collect();
            let action_cols: Vec<usize> =
                batch.iter().map(|tr| tr.action.as_discrete()).collect();
            let rows = g.gather_rows(logits, pair_rows);
            let lsm = g.log_softmax_rows(rows);
            let picked = g.pick(lsm, action_cols);
            let neg = g.affine(picked, -1.0, 0.0);
            let loss = g.mean_all(neg);
            let loss_val = g.value(loss).get(0, 0);
            let grads = g.backward(loss);
            let flat = grads
                .wrt_dense(logits, t.n_states * t.n_states, t.n_actions)
                .data()
                .to_vec();
            Ok((loss_val, flat))
        }
        DecoupledPolicy::Continuous(c) => {
            let (inputs, obs) = continuous_pair_batch(c, batch)?;
            let mut g = Graph::new();
            let x = g.constant(inputs);
            let (mean, log_std, binding) = c.invdyn_head.build(&mut g, &c.invdyn.values, x);
            let lp = g.gaussian_logp(mean, log_std, obs);
            let neg = g.affine(lp, -1.0, 0.0);
            let loss = g.mean_all(neg);
            let loss_val = g.value(loss).get(0, 0);
            let grads = g.backward(loss);
            let mut flat = vec![0.0; c.invdyn.len()];
            c.invdyn_head
                .net
                .accumulate_grads(&grads, &binding, &mut flat);
            Ok((loss_val, flat))
        }
    }
}

/// Unweighted maximum-likelihood planner loss on expert consecutive state
/// pairs: `mean −log h_ψ(s'|s)`, gradient with respect to ψ.
pub fn supervised_planner_grad(
    policy: &DecoupledPolicy,
    pairs: &[(&[f64], &[f64])],
) -> Result<(f64, Vec<f64>), DepoError> {
    if pairs.is_empty() {
        return Err(DepoError::EmptyBatch {
            context: "supervised_planner_grad",
        });
    }
    weighted_planner_nll_grad(policy, pairs, &vec![1.0; pairs.len()])
}

/// Calibrated decoupled policy gradient: Q-weighted maximum likelihood of the
/// planner on *environment-observed* transitions. Weights are the per-batch
/// min-max normalization of `q_values` into [0,1]; a constant-Q batch (no
/// preference information) degrades to weight 1 everywhere, making the update
/// bitwise identical to the unweighted MLE on the same pairs.
pub fn cdepg_grad(
    policy: &DecoupledPolicy,
    batch: &[&Transition],
    q_values: &[f64],
) -> Result<(f64, Vec<f64>), DepoError> {
    if batch.is_empty() {
        return Err(DepoError::EmptyBatch {
            context: "cdepg_grad",
        });
    }
    check_len("cdepg_grad q_values", batch.len(), q_values.len())?;
    let weights = normalize_batch_weights(q_values);
    let pairs: Vec<(&[f64], &[f64])> = batch
        .iter()
        .map(|t| (t.state.as_slice(), t.next_state.as_slice()))
        .collect();
    weighted_planner_nll_grad(policy, &pairs, &weights)
}

/// Min-max normalization of a weight batch into [0,1]; a degenerate batch
/// (max = min, no ordering information) maps to all ones.
pub fn normalize_batch_weights(q: &[f64]) -> Vec<f64> {
    let mn = q.iter().cloned().fold(f64::INFINITY, f64::min);
    let mx = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = mx - mn;
    if !(span > 1e-12) {
        return vec![1.0; q.len()];
    }
    q.iter().map(|&v| (v - mn) / span).collect()
}

/// Decoupled policy gradient with respect to the planner parameters only.
///
/// Maximizes `E[w · π(a|s)]` where `w = clip(Q(s,a)/π(a|s), ±clip)` is frozen
/// for the step, and `π` is recomputed through the (frozen) inverse dynamics
/// so the planner receives the pathwise/categorical chain term. At the
/// evaluation point this gradient equals that of the familiar surrogate
/// `E[Q·log π]` whenever the clip is inactive. Inverse-dynamics parameters
/// are never touched.
pub fn depg_grad<R: Rng>(
    policy: &DecoupledPolicy,
    batch: &[&Transition],
    q_values: &[f64],
    spec: &PlannerUpdateSpec,
    rng: &mut R,
) -> Result<(f64, Vec<f64>), DepoError> {
    if batch.is_empty() {
        return Err(DepoError::EmptyBatch {
            context: "depg_grad",
        });
    }
    check_len("depg_grad q_values", batch.len(), q_values.len())?;
    match policy {
        DecoupledPolicy::Tabular(t) => depg_tabular(policy, t, batch, q_values, spec),
        DecoupledPolicy::Continuous(c) => {
            // Importance weights from the Monte-Carlo marginal, then a single
            // reparameterized planner sample per element for the path term.
            let mut weights = Vec::with_capacity(batch.len());
            for (i, tr) in batch.iter().enumerate() {
                let pi = policy
                    .log_pi(&tr.state, &tr.action, spec.n_pi_samples, rng)?
                    .exp();
                if pi < spec.prob_floor {
                    return Err(DepoError::SupportCollapse {
                        index: i,
                        prob: pi,
                        floor: spec.prob_floor,
                    });
                }
                weights.push((q_values[i] / pi).clamp(-spec.importance_clip, spec.importance_clip));
            }
            let mut eps = Mat::zeros(batch.len(), c.state_dim);
            for r in 0..batch.len() {
                for d in 0..c.state_dim {
                    eps.set(r, d, standard_normal(rng));
                }
            }
            depg_continuous_core(c, batch, &weights, &eps)
        }
    }
}

/// Variant of [`depg_grad`] for long off-policy runs: batch elements whose
/// composed-policy probability has fallen below the support floor are dropped
/// (their surviving count is reported) instead of aborting. A replay buffer
/// inevitably retains actions far outside the support of a policy that has
/// sharpened since they were collected; those elements' importance weights
/// are pinned at the clip boundary and carry no usable signal. The loss and
/// gradient average over the kept elements; an entirely collapsed batch
/// yields exact zeros.
pub fn depg_grad_dropping_unsupported<R: Rng>(
    policy: &DecoupledPolicy,
    batch: &[&Transition],
    q_values: &[f64],
    spec: &PlannerUpdateSpec,
    rng: &mut R,
) -> Result<(f64, Vec<f64>, usize), DepoError> {
    if batch.is_empty() {
        return Err(DepoError::EmptyBatch {
            context: "depg_grad_dropping_unsupported",
        });
    }
    check_len(
        "depg_grad_dropping_unsupported q_values",
        batch.len(),
        q_values.len(),
    )?;
    match policy {
        DecoupledPolicy::Tabular(t) => {
            let mut kept: Vec<&Transition> = Vec::with_capacity(batch.len());
            let mut kept_q = Vec::with_capacity(batch.len());
            for (i, tr) in batch.iter().enumerate() {
                let s_idx = policy.state_index(&tr.state);
                let pi = policy.compose_row(s_idx)[tr.action.as_discrete()];
                if pi >= spec.prob_floor {
                    kept.push(tr);
                    kept_q.push(q_values[i]);
                }
            }
            if kept.is_empty() {
                return Ok((0.0, vec![0.0; policy.planner_params().len()], 0));
            }
            let (loss, grad) = depg_tabular(policy, t, &kept, &kept_q, spec)?;
            Ok((loss, grad, kept.len()))
        }
        DecoupledPolicy::Continuous(c) => {
            let mut kept: Vec<&Transition> = Vec::with_capacity(batch.len());
            let mut weights = Vec::with_capacity(batch.len());
            for (i, tr) in batch.iter().enumerate() {
                let pi = policy
                    .log_pi(&tr.state, &tr.action, spec.n_pi_samples, rng)?
                    .exp();
                if pi >= spec.prob_floor {
                    kept.push(tr);
                    weights
                        .push((q_values[i] / pi).clamp(-spec.importance_clip, spec.importance_clip));
                }
            }
            if kept.is_empty() {
                return Ok((0.0, vec![0.0; policy.planner_params().len()], 0));
            }
            let mut eps = Mat::zeros(kept.len(), c.state_dim);
            for r in 0..kept.len() {
                for d in 0..c.state_dim {
                    eps.set(r, d, standard_normal(rng));
                }
            }
            let (loss, grad) = depg_continuous_core(c, &kept, &weights, &eps)?;
            Ok((loss, grad, kept.len()))
        }
    }
}

/// Deterministic core of the continuous-mode DePG estimator: the caller
/// supplies the frozen importance weights and the planner noise, making this
/// a pure map from planner parameters to `(loss, gradient)` — the form that
/// finite-difference verification requires.
pub fn depg_continuous_core(
    c: &ContinuousDecoupled,
    batch: &[&Transition],
    weights: &[f64],
    eps: &Mat,
) -> Result<(f64, Vec<f64>), DepoError> {
    check_len("depg_continuous_core weights", batch.len(), weights.len())?;
    let mut states = Mat::zeros(batch.len(), c.state_dim);
    let mut actions = Mat::zeros(batch.len(), c.action_dim);
    for (r, tr) in batch.iter().enumerate() {
        check_len("depg state dim", c.state_dim, tr.state.len())?;
        let a = tr.action.as_continuous();
        check_len("depg action dim", c.action_dim, a.len())?;
        for d in 0..c.state_dim {
            states.set(r, d, tr.state[d]);
        }
        for d in 0..c.action_dim {
            actions.set(r, d, a[d]);
        }
    }
    let mut g = Graph::new();
    let s = g.constant(states);
    let (mean, log_std, planner_binding) = c.planner_head.build(&mut g, &c.planner.values, s);
    let e = g.constant(eps.clone());
    let std = g.exp(log_std);
    let noise = g.mul(std, e);
    let planned = g.add(mean, noise);
    let inv_in = g.concat_cols(s, planned);
    let (a_mean, a_log_std, _invdyn_binding) = c.invdyn_head.build(&mut g, &c.invdyn.values, inv_in);
    let lp = g.gaussian_logp(a_mean, a_log_std, actions);
    let density = g.exp(lp);
    let neg_weights: Vec<f64> = weights.iter().map(|&w| -w).collect();
    let weighted = g.scale_rows(density, neg_weights);
    let loss = g.mean_all(weighted);
    let loss_val = g.value(loss).get(0, 0);
    if !loss_val.is_finite() {
        return Err(DepoError::NonFinite {
            context: "depg_continuous_core loss",
        });
    }
    let grads = g.backward(loss);
    let mut flat = vec![0.0; c.planner.len()];
    c.planner_head
        .net
        .accumulate_grads(&grads, &planner_binding, &mut flat);
    Ok((loss_val, flat))
}

fn depg_tabular(
    policy: &DecoupledPolicy,
    t: &TabularDecoupled,
    batch: &[&Transition],
    q_values: &[f64],
    spec: &PlannerUpdateSpec,
) -> Result<(f64, Vec<f64>), DepoError> {
    let mut s_indices = Vec::with_capacity(batch.len());
    let mut weights = Vec::with_capacity(batch.len());
    let mut invdyn_cols = Mat::zeros(batch.len(), t.n_states);
    for (i, tr) in batch.iter().enumerate() {
        let s_idx = policy.state_index(&tr.state);
        let a_idx = tr.action.as_discrete();
        let pi = policy.compose_row(s_idx)[a_idx];
        if pi < spec.prob_floor {
            return Err(DepoError::SupportCollapse {
                index: i,
                prob: pi,
                floor: spec.prob_floor,
            });
        }
        weights.push(-(q_values[i] / pi).clamp(-spec.importance_clip, spec.importance_clip));
        for sigma in 0..t.n_states {
            invdyn_cols.set(i, sigma, policy.invdyn_probs(s_idx, sigma)[a_idx]);
        }
        s_indices.push(s_idx);
    }
    let mut g = Graph::new();
    let logits = g.param(t.planner.slice(LOGITS_SLICE)?, t.n_states, t.n_states);
    let rows = g.gather_rows(logits, s_indices);
    let lsm = g.log_softmax_rows(rows);
    let h = g.exp(lsm);
    let ival = g.constant(invdyn_cols);
    let prod = g.mul(h, ival);
    let pi_hat = g.row_sum(prod);
    let weighted = g.scale_rows(pi_hat, weights);
    let loss = g.mean_all(weighted);
    let loss_val = g.value(loss).get(0, 0);
    let grads = g.backward(loss);
    let flat = grads.wrt_dense(logits, t.n_states, t.n_states).data().to_vec();
    Ok((loss_val, flat))
}

/// Assembles one planner update: DePG on the replay batch, supervised MLE on
/// expert pairs, CDePG on the replay batch, combined as
/// `depg + λ_h·(supervised + cdepg)` with disabled or empty terms contributing
/// exact zeros.
pub fn combined_planner_gradient<R: Rng>(
    policy: &DecoupledPolicy,
    batch: &[&Transition],
    q_values: &[f64],
    demo_pairs: &[(&[f64], &[f64])],
    spec: &PlannerUpdateSpec,
    rng: &mut R,
) -> Result<GradientReport, DepoError> {
    let n = policy.planner_params().len();
    let zeros = || vec![0.0; n];
    let (depg_loss, depg) = if spec.use_depg {
        depg_grad(policy, batch, q_values, spec, rng)?
    } else {
        (0.0, zeros())
    };
    let (supervised_loss, supervised) = if spec.use_supervised {
        supervised_planner_grad(policy, demo_pairs)?
    } else {
        (0.0, zeros())
    };
    let (cdepg_loss, cdepg) = if spec.use_cdepg {
        cdepg_grad(policy, batch, q_values)?
    } else {
        (0.0, zeros())
    };
    let combined: Vec<f64> = depg
        .iter()
        .zip(&supervised)
        .zip(&cdepg)
        .map(|((&d, &s), &c)| d + spec.lambda_h * (s + c))
        .collect();
    Ok(GradientReport {
        depg,
        supervised,
        cdepg,
        combined,
        depg_loss,
        supervised_loss,
        cdepg_loss,
    })
}

/// One optimizer step on the planner parameters; refuses non-finite
/// gradients so a diverging run aborts at the first bad number.
pub fn apply_planner_step(
    policy: &mut DecoupledPolicy,
    grad: &[f64],
    opt: &mut Adam,
) -> Result<(), DepoError> {
    let params = policy.planner_params_mut();
    if grad.len() != params.len() {
        return Err(DepoError::LengthMismatch {
            context: "apply_planner_step",
            expected: params.len(),
            got: grad.len(),
        });
    }
    if !grad.iter().all(|v| v.is_finite()) {
        return Err(DepoError::NonFinite {
            context: "apply_planner_step gradient",
        });
    }
    opt.step(&mut params.values, grad);
    Ok(())
}

/// Shared weighted-MLE core: `loss = mean_i w_i · (−log h_ψ(s'_i|s_i))`.
fn weighted_planner_nll_grad(
    policy: &DecoupledPolicy,
    pairs: &[(&[f64], &[f64])],
    weights: &[f64],
) -> Result<(f64, Vec<f64>), DepoError> {
    check_len("weighted planner weights", pairs.len(), weights.len())?;
    let neg_weights: Vec<f64> = weights.iter().map(|&w| -w).collect();
    match policy {
        DecoupledPolicy::Tabular(t) => {
            let s_indices: Vec<usize> =
                pairs.iter().map(|(s, _)| policy.state_index(s)).collect();
            let next_indices: Vec<usize> =
                pairs.iter().map(|(_, n)| policy.state_index(n)).collect();
            let mut g = Graph::new();
            let logits = g.param(t.planner.slice(LOGITS_SLICE)?, t.n_states, t.n_states);
            let rows = g.gather_rows(logits, s_indices);
            let lsm = g.log_softmax_rows(rows);
            let picked = g.pick(lsm, next_indices);
            let weighted = g.scale_rows(picked, neg_weights);
            let loss = g.mean_all(weighted);
            let loss_val = g.value(loss).get(0, 0);
            let grads = g.backward(loss);
            let flat = grads.wrt_dense(logits, t.n_states, t.n_states).data().to_vec();
            Ok((loss_val, flat))
        }
        DecoupledPolicy::Continuous(c) => {
            let mut states = Mat::zeros(pairs.len(), c.state_dim);
            let mut nexts = Mat::zeros(pairs.len(), c.state_dim);
            for (r, (s, nx)) in pairs.iter().enumerate() {
                check_len("planner pair state dim", c.state_dim, s.len())?;
                check_len("planner pair next dim", c.state_dim, nx.len())?;
                for d in 0..c.state_dim {
                    states.set(r, d, s[d]);
                    nexts.set(r, d, nx[d]);
                }
            }
            let mut g = Graph::new();
            let x = g.constant(states);
            let (mean, log_std, binding) = c.planner_head.build(&mut g, &c.planner.values, x);
            let lp = g.gaussian_logp(mean, log_std, nexts);
            let weighted = g.scale_rows(lp, neg_weights);
            let loss = g.mean_all(weighted);
            let loss_val = g.value(loss).get(0, 0);
            let grads = g.backward(loss);
            let mut flat = vec![0.0; c.planner.len()];
            c.planner_head
                .net
                .accumulate_grads(&grads, &binding, &mut flat);
            Ok((loss_val, flat))
        }
    }
}

/// Stacks `(s ⧺ s')` inputs and action observations for the continuous
/// inverse-dynamics network.
fn continuous_pair_batch(
    c: &ContinuousDecoupled,
    batch: &[&Transition],
) -> Result<(Mat, Mat), DepoError> {
    let mut inputs = Mat::zeros(batch.len(), 2 * c.state_dim);
    let mut obs = Mat::zeros(batch.len(), c.action_dim);
    for (r, tr) in batch.iter().enumerate() {
        check_len("invdyn state dim", c.state_dim, tr.state.len())?;
        check_len("invdyn next dim", c.state_dim, tr.next_state.len())?;
        let a = tr.action.as_continuous();
        check_len("invdyn action dim", c.action_dim, a.len())?;
        for d in 0..c.state_dim {
            inputs.set(r, d, tr.state[d]);
            inputs.set(r, c.state_dim + d, tr.next_state[d]);
        }
        for d in 0..c.action_dim {
            obs.set(r, d, a[d]);
        }
    }
    Ok((inputs, obs))
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<(), DepoError> {
    if expected == got {
        Ok(())
    } else {
        Err(DepoError::LengthMismatch {
            context,
            expected,
            got,
        })
    }
}
