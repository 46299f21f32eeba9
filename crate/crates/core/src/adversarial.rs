//! Adversarial state-transition matching: a binary classifier over `(s, s′)`
//! pairs and the log-probability imitation reward it induces.
//!
//! Two discriminator families are provided:
//!
//! * a **tabular** classifier (one logit per dense state pair) for the grid
//!   world, exact and free of approximation art-facts, and
//! * an **MLP** classifier over concatenated `(s, s′)` vectors for continuous
//!   states, regularized by a gradient penalty on interpolated pairs.
//!
//! The gradient penalty needs second-order information — the parameter gradient
//! of an input-gradient norm.  The tape in [`crate::approx`] is single-use, so
//! the input gradient is *built structurally* out of primitive ops (matmuls with
//! the weight leaves and tanh-derivative factors); one ordinary backward sweep
//! through that expression then yields exact double-backprop gradients.
//!
//! ## Label conventions
//!
//! The classical cross-entropy objective admits two labelings.  With
//! [`DiscriminatorSettings::swap_labels`] = `false` the loss pushes **agent**
//! pairs toward output 1 and expert pairs toward 0; the induced reward
//! `scale · ln D` then rewards the agent for being classified as itself, which
//! is self-reinforcing rather than imitative.  The default (`true`) swaps the
//! labels so the classifier scores *expert-likeness* and maximizing the reward
//! drives the agent's transition distribution toward the expert's — the
//! standard adversarial-imitation arrangement.  Both conventions share the same
//! reward formula and optimum structure; only the batch labeling differs.

use crate::approx::{
    softplus, Adam, ApproxError, Graph, Layout, Mat, MlpBinding, MlpSpec, NodeId, ParamVector,
};
use rand::Rng;
use thiserror::Error;

/// Default weight of the gradient penalty on interpolated pairs.
pub const DEFAULT_GRADIENT_PENALTY_WEIGHT: f64 = 4.0;

/// Logit clamp used by [`Discriminator::probability`] and
/// [`Discriminator::reward`]: `σ(±30)` is strictly inside `(0, 1)` in `f64`,
/// so classifier outputs and rewards keep their open-interval guarantees even
/// for saturated logits.
pub const PROBABILITY_LOGIT_CLAMP: f64 = 30.0;

/// Additive constant inside the gradient-norm square root, keeping the penalty
/// differentiable when an interpolate's input gradient vanishes.
const NORM_EPS: f64 = 1e-12;

const LOGITS_SLICE: &str = "logits";

/// Errors surfaced by discriminator training and evaluation.
#[derive(Debug, Error)]
pub enum AdversarialError {
    #[error(transparent)]
    Approx(#[from] ApproxError),
    /// A loss was requested over an empty agent or expert batch.
    #[error("empty batch in {context}")]
    EmptyBatch { context: &'static str },
    /// A state or gradient vector had the wrong length.
    #[error("length mismatch in {context}: expected {expected}, got {got}")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// A vector state does not address a cell of the tabular classifier's grid.
    #[error("state {state:?} does not index a cell of a side-{side} grid")]
    StateNotOnGrid { state: Vec<f64>, side: usize },
    /// A non-finite value appeared in a loss, gradient, or parameter update.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },
}

/// Knobs of the discriminator objective.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSettings {
    /// `false`: agent pairs are labeled toward 1 and expert pairs toward 0
    /// (the printed objective).  `true` (default): labels are swapped so the
    /// classifier scores expert-likeness; see the module docs.
    pub swap_labels: bool,
    /// Weight of the interpolate gradient penalty.  Ignored by the tabular
    /// mode, whose inputs are discrete indices with no meaningful input
    /// gradient.
    pub gradient_penalty_weight: f64,
}

impl Default for DiscriminatorSettings {
    fn default() -> Self {
        DiscriminatorSettings {
            swap_labels: true,
            gradient_penalty_weight: DEFAULT_GRADIENT_PENALTY_WEIGHT,
        }
    }
}

/// One loss evaluation: the scalar pieces plus the flat parameter gradient of
/// `loss = base_loss + gradient_penalty_weight · gradient_penalty`.
#[derive(Debug, Clone)]
pub struct DiscriminatorReport {
    /// The optimized objective (base plus weighted penalty).
    pub loss: f64,
    /// Two-sided cross-entropy alone.
    pub base_loss: f64,
    /// Unweighted mean of `(‖∇_x D‖ − 1)²` over interpolated pairs
    /// (zero in tabular mode or when the penalty weight is zero).
    pub gradient_penalty: f64,
    /// Gradient of `loss` with respect to the flat parameter vector.
    pub grad: Vec<f64>,
}

/// Binary classifier over state transitions with outputs in `(0, 1)`.
#[derive(Debug, Clone)]
pub enum Discriminator {
    /// One logit per dense `(state, next_state)` pair of a square grid; states
    /// are `[x, y]` vectors addressing cells as `y·side + x`.
    Tabular {
        side: usize,
        n_states: usize,
        params: ParamVector,
    },
    /// MLP over the concatenation `[s, s′]` emitting a single logit.
    Mlp {
        state_dim: usize,
        spec: MlpSpec,
        params: ParamVector,
    },
}

impl Discriminator {
    /// Tabular classifier for a `side × side` grid, initialized to logit 0
    /// everywhere (output exactly ½ on every pair).
    pub fn tabular(side: usize) -> Self {
        let n_states = side * side;
        let layout = Layout::new(&[(LOGITS_SLICE, n_states * n_states)]);
        Discriminator::Tabular {
            side,
            n_states,
            params: ParamVector::zeros(layout),
        }
    }

    /// MLP classifier over `2·state_dim` inputs through tanh `hidden` layers to
    /// one logit.
    pub fn mlp<R: Rng>(state_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![2 * state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let spec = MlpSpec::new(&sizes);
        let values = spec.init_params(rng);
        let parts = spec.layout_parts();
        let refs: Vec<(&str, usize)> = parts.iter().map(|(n, l)| (n.as_str(), *l)).collect();
        let params = ParamVector::from_values(Layout::new(&refs), values)
            .expect("init_params length always matches the spec layout");
        Discriminator::Mlp {
            state_dim,
            spec,
            params,
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self, Discriminator::Tabular { .. })
    }

    pub fn params(&self) -> &ParamVector {
        match self {
            Discriminator::Tabular { params, .. } => params,
            Discriminator::Mlp { params, .. } => params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        match self {
            Discriminator::Tabular { params, .. } => params,
            Discriminator::Mlp { params, .. } => params,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params().len()
    }

    /// Raw classifier logit for one transition.
    pub fn logit(&self, state: &[f64], next: &[f64]) -> Result<f64, AdversarialError> {
        match self {
            Discriminator::Tabular { n_states, params, .. } => {
                let si = self.cell_index(state)?;
                let ni = self.cell_index(next)?;
                Ok(params.values[si * n_states + ni])
            }
            Discriminator::Mlp { state_dim, spec, params } => {
                check_dim("Discriminator::logit state", *state_dim, state)?;
                check_dim("Discriminator::logit next state", *state_dim, next)?;
                let mut row = Vec::with_capacity(2 * state_dim);
                row.extend_from_slice(state);
                row.extend_from_slice(next);
                let out = spec.forward(&params.values, &Mat::from_row(&row))?;
                Ok(out.get(0, 0))
            }
        }
    }

    /// Classifier output `σ(logit)`, strictly inside `(0, 1)` thanks to the
    /// [`PROBABILITY_LOGIT_CLAMP`] applied first.
    pub fn probability(&self, state: &[f64], next: &[f64]) -> Result<f64, AdversarialError> {
        let x = self
            .logit(state, next)?
            .clamp(-PROBABILITY_LOGIT_CLAMP, PROBABILITY_LOGIT_CLAMP);
        Ok(1.0 / (1.0 + (-x).exp()))
    }

    /// Imitation reward `scale · ln D(s, s′)`, computed through the stable form
    /// `−scale · softplus(−logit)`.  Always ≤ 0 for positive `scale` because
    /// the classifier output lies in `(0, 1)`.
    pub fn reward(
        &self,
        state: &[f64],
        next: &[f64],
        scale: f64,
    ) -> Result<f64, AdversarialError> {
        let x = self
            .logit(state, next)?
            .clamp(-PROBABILITY_LOGIT_CLAMP, PROBABILITY_LOGIT_CLAMP);
        Ok(-scale * softplus(-x))
    }

    /// Two-sided cross-entropy over the batches plus (in MLP mode) the
    /// gradient penalty on uniform interpolates, with its exact parameter
    /// gradient.
    ///
    /// Interpolates pair `agent[i]` with `expert[i mod expert.len()]` under an
    /// independent uniform coefficient per pair, so the penalty covers the
    /// segment between the two supports.  `rng` is consumed only in MLP mode
    /// with a positive penalty weight.
    pub fn loss_and_grad<R: Rng>(
        &self,
        agent: &[(&[f64], &[f64])],
        expert: &[(&[f64], &[f64])],
        settings: &DiscriminatorSettings,
        rng: &mut R,
    ) -> Result<DiscriminatorReport, AdversarialError> {
        if agent.is_empty() {
            return Err(AdversarialError::EmptyBatch {
                context: "discriminator loss, agent batch",
            });
        }
        if expert.is_empty() {
            return Err(AdversarialError::EmptyBatch {
                context: "discriminator loss, expert batch",
            });
        }
        match self {
            Discriminator::Tabular { n_states, params, .. } => {
                self.tabular_loss(*n_states, params, agent, expert, settings)
            }
            Discriminator::Mlp { state_dim, spec, params } => mlp_loss(
                *state_dim,
                spec,
                params,
                agent,
                expert,
                settings,
                rng,
            ),
        }
    }

    /// One descent step on the flat parameters with length and finiteness
    /// checks on both the gradient and the updated parameters.
    pub fn apply_step(&mut self, grad: &[f64], opt: &mut Adam) -> Result<(), AdversarialError> {
        let params = self.params_mut();
        if grad.len() != params.len() {
            return Err(AdversarialError::LengthMismatch {
                context: "Discriminator::apply_step gradient",
                expected: params.len(),
                got: grad.len(),
            });
        }
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(AdversarialError::NonFinite {
                context: "Discriminator::apply_step gradient",
            });
        }
        opt.step(&mut params.values, grad);
        params.check_finite("Discriminator::apply_step parameters")?;
        Ok(())
    }

    /// Dense cell index of an `[x, y]` state on this tabular classifier's grid.
    fn cell_index(&self, state: &[f64]) -> Result<usize, AdversarialError> {
        let side = match self {
            Discriminator::Tabular { side, .. } => *side,
            Discriminator::Mlp { .. } => unreachable!("cell_index is tabular-only"),
        };
        let bad = || AdversarialError::StateNotOnGrid {
            state: state.to_vec(),
            side,
        };
        if state.len() != 2 {
            return Err(bad());
        }
        let mut coords = [0usize; 2];
        for (slot, &v) in coords.iter_mut().zip(state) {
            if !v.is_finite() || (v - v.round()).abs() > 1e-9 {
                return Err(bad());
            }
            let r = v.round();
            if r < 0.0 || r >= side as f64 {
                return Err(bad());
            }
            *slot = r as usize;
        }
        Ok(coords[1] * side + coords[0])
    }

    fn tabular_loss(
        &self,
        n_states: usize,
        params: &ParamVector,
        agent: &[(&[f64], &[f64])],
        expert: &[(&[f64], &[f64])],
        settings: &DiscriminatorSettings,
    ) -> Result<DiscriminatorReport, AdversarialError> {
        let agent_idx = self.pair_indices(n_states, agent)?;
        let expert_idx = self.pair_indices(n_states, expert)?;
        let mut g = Graph::new();
        let table = g.param(&params.values, n_states * n_states, 1);
        let agent_logits = g.gather_rows(table, agent_idx);
        let expert_logits = g.gather_rows(table, expert_idx);
        let (toward_one, toward_zero) = if settings.swap_labels {
            (expert_logits, agent_logits)
        } else {
            (agent_logits, expert_logits)
        };
        let base = cross_entropy(&mut g, toward_one, toward_zero);
        let loss = g.value(base).get(0, 0);
        if !loss.is_finite() {
            return Err(AdversarialError::NonFinite {
                context: "tabular discriminator loss",
            });
        }
        let grads = g.backward(base);
        let grad = grads
            .wrt_dense(table, n_states * n_states, 1)
            .data()
            .to_vec();
        Ok(DiscriminatorReport {
            loss,
            base_loss: loss,
            gradient_penalty: 0.0,
            grad,
        })
    }

    fn pair_indices(
        &self,
        n_states: usize,
        batch: &[(&[f64], &[f64])],
    ) -> Result<Vec<usize>, AdversarialError> {
        batch
            .iter()
            .map(|(s, n)| Ok(self.cell_index(s)? * n_states + self.cell_index(n)?))
            .collect()
    }
}

/// `mean softplus(−x)` over the toward-1 logits plus `mean softplus(x)` over
/// the toward-0 logits: the numerically stable form of
/// `−E[ln σ(x₁)] − E[ln(1 − σ(x₀))]`.
fn cross_entropy(g: &mut Graph, toward_one: NodeId, toward_zero: NodeId) -> NodeId {
    let neg = g.affine(toward_one, -1.0, 0.0);
    let sp_one = g.softplus(neg);
    let term_one = g.mean_all(sp_one);
    let sp_zero = g.softplus(toward_zero);
    let term_zero = g.mean_all(sp_zero);
    g.add(term_one, term_zero)
}

/// Records, on the tape that already holds `binding`, the expression for the
/// gradient of the network's scalar output with respect to its input rows
/// (a `batch × input_dim` node).  The expression is assembled from the weight
/// leaves and hidden-activation nodes, so a subsequent backward pass through it
/// produces exact second-order parameter gradients.
fn scalar_output_input_gradient(g: &mut Graph, binding: &MlpBinding, batch: usize) -> NodeId {
    assert_eq!(
        g.value(binding.output).cols(),
        1,
        "input-gradient expression requires a scalar-output network"
    );
    let n_layers = binding.weight_nodes.len();
    // Gradient of the output with respect to the last pre-activation: ones.
    let mut grad = g.constant(Mat::from_vec(batch, 1, vec![1.0; batch]));
    for l in (0..n_layers).rev() {
        // Through the linear layer: d(a_l)/d(input_l) = W_l.
        grad = g.matmul(grad, binding.weight_nodes[l]);
        if l > 0 {
            // Through the tanh that produced this layer's input: 1 − h².
            let h = binding.hidden_activations[l - 1];
            let sq = g.mul(h, h);
            let dtanh = g.affine(sq, -1.0, 1.0);
            grad = g.mul(grad, dtanh);
        }
    }
    grad
}

fn mlp_loss<R: Rng>(
    state_dim: usize,
    spec: &MlpSpec,
    params: &ParamVector,
    agent: &[(&[f64], &[f64])],
    expert: &[(&[f64], &[f64])],
    settings: &DiscriminatorSettings,
    rng: &mut R,
) -> Result<DiscriminatorReport, AdversarialError> {
    let xa = pair_matrix(state_dim, agent, "discriminator agent batch")?;
    let xe = pair_matrix(state_dim, expert, "discriminator expert batch")?;
    let mut g = Graph::new();
    let xa_node = g.constant(xa.clone());
    let xe_node = g.constant(xe.clone());
    let binding_a = spec.build(&mut g, &params.values, xa_node);
    let binding_e = spec.build(&mut g, &params.values, xe_node);
    let (toward_one, toward_zero) = if settings.swap_labels {
        (binding_e.output, binding_a.output)
    } else {
        (binding_a.output, binding_e.output)
    };
    let base = cross_entropy(&mut g, toward_one, toward_zero);

    let mut binding_i = None;
    let mut gp_node = None;
    let total = if settings.gradient_penalty_weight > 0.0 {
        let n_int = agent.len();
        let in_dim = 2 * state_dim;
        let mut xi = Mat::zeros(n_int, in_dim);
        for i in 0..n_int {
            let u: f64 = rng.random();
            let ra = xa.row(i);
            let re = xe.row(i % expert.len());
            for j in 0..in_dim {
                xi.set(i, j, u * ra[j] + (1.0 - u) * re[j]);
            }
        }
        let xi_node = g.constant(xi);
        let bi = spec.build(&mut g, &params.values, xi_node);
        let d = g.sigmoid(bi.output);
        let grad_logit = scalar_output_input_gradient(&mut g, &bi, n_int);
        // ∇_x σ(f(x)) = σ(f)(1 − σ(f)) · ∇_x f, broadcast across input columns.
        let one_minus_d = g.affine(d, -1.0, 1.0);
        let factor = g.mul(d, one_minus_d);
        let ones_row = g.constant(Mat::from_vec(1, in_dim, vec![1.0; in_dim]));
        let factor_wide = g.matmul(factor, ones_row);
        let grad_d = g.mul(grad_logit, factor_wide);
        let sq = g.mul(grad_d, grad_d);
        let sum = g.row_sum(sq);
        let shifted = g.affine(sum, 1.0, NORM_EPS);
        let norm = g.sqrt(shifted);
        let off_one = g.affine(norm, 1.0, -1.0);
        let pen = g.mul(off_one, off_one);
        let gp = g.mean_all(pen);
        let weighted = g.affine(gp, settings.gradient_penalty_weight, 0.0);
        binding_i = Some(bi);
        gp_node = Some(gp);
        g.add(base, weighted)
    } else {
        base
    };

    let loss = g.value(total).get(0, 0);
    let base_loss = g.value(base).get(0, 0);
    let gradient_penalty = gp_node.map_or(0.0, |n| g.value(n).get(0, 0));
    if !loss.is_finite() {
        return Err(AdversarialError::NonFinite {
            context: "discriminator loss",
        });
    }
    let grads = g.backward(total);
    let mut grad = vec![0.0; spec.param_count()];
    spec.accumulate_grads(&grads, &binding_a, &mut grad);
    spec.accumulate_grads(&grads, &binding_e, &mut grad);
    if let Some(bi) = &binding_i {
        spec.accumulate_grads(&grads, bi, &mut grad);
    }
    if !grad.iter().all(|v| v.is_finite()) {
        return Err(AdversarialError::NonFinite {
            context: "discriminator gradient",
        });
    }
    Ok(DiscriminatorReport {
        loss,
        base_loss,
        gradient_penalty,
        grad,
    })
}

/// Stacks `(s, s′)` pairs into a `batch × 2·state_dim` matrix, validating
/// dimensions.
fn pair_matrix(
    state_dim: usize,
    batch: &[(&[f64], &[f64])],
    context: &'static str,
) -> Result<Mat, AdversarialError> {
    let mut out = Mat::zeros(batch.len(), 2 * state_dim);
    for (i, (s, n)) in batch.iter().enumerate() {
        check_dim(context, state_dim, s)?;
        check_dim(context, state_dim, n)?;
        for (j, &v) in s.iter().chain(n.iter()).enumerate() {
            out.set(i, j, v);
        }
    }
    Ok(out)
}

fn check_dim(
    context: &'static str,
    expected: usize,
    v: &[f64],
) -> Result<(), AdversarialError> {
    if v.len() != expected {
        return Err(AdversarialError::LengthMismatch {
            context,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}
