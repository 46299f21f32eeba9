//! Multilayer perceptrons and diagonal-Gaussian heads over the autodiff tape.
//!
//! An [`MlpSpec`] is pure shape information; parameters live in a flat slice
//! ordered `w0, b0, w1, b1, …` with tanh activations on hidden layers and a
//! linear output layer.  [`GaussianHead`] interprets the final layer as
//! concatenated `(mean, log_std)` with the log-std clamped to
//! `[LOG_STD_MIN, LOG_STD_MAX]` before exponentiation.

use super::graph::{Graph, Mat, NodeId};
use super::ApproxError;
use rand::Rng;

/// Lower clamp for Gaussian head log standard deviations.
pub const LOG_STD_MIN: f64 = -20.0;
/// Upper clamp for Gaussian head log standard deviations.
pub const LOG_STD_MAX: f64 = 2.0;

/// Shape of a fully connected network: `sizes[0]` inputs, `sizes.last()`
/// outputs, tanh on every hidden layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    sizes: Vec<usize>,
}

/// Tape handles for one materialized network: per-layer parameter leaves plus
/// the output node, used to read gradients back into flat storage.
///
/// `hidden_activations` lists the tanh output of each hidden layer in order
/// (empty for a single-layer network); callers that need derived expressions —
/// e.g. an input-gradient built structurally for a gradient penalty — can chain
/// further tape ops off these handles.
#[derive(Debug, Clone)]
pub struct MlpBinding {
    pub weight_nodes: Vec<NodeId>,
    pub bias_nodes: Vec<NodeId>,
    pub hidden_activations: Vec<NodeId>,
    pub output: NodeId,
}

impl MlpSpec {
    /// Panics on fewer than two sizes or any zero size (programming error).
    pub fn new(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "MlpSpec needs input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "MlpSpec sizes must be positive");
        MlpSpec {
            sizes: sizes.to_vec(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Total parameter count across all layers.
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .map(|(i, o)| o * i + o)
            .sum()
    }

    fn layer_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sizes.windows(2).map(|w| (w[0], w[1]))
    }

    /// `(name, len)` pairs for a [`super::Layout`]: `w0, b0, w1, b1, …`.
    pub fn layout_parts(&self) -> Vec<(String, usize)> {
        let mut parts = Vec::new();
        for (l, (i, o)) in self.layer_dims().enumerate() {
            parts.push((format!("w{l}"), o * i));
            parts.push((format!("b{l}"), o));
        }
        parts
    }

    /// Uniform `±1/√fan_in` weight init, zero biases.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (i, o) in self.layer_dims() {
            let bound = 1.0 / (i as f64).sqrt();
            for _ in 0..o * i {
                out.push(rng.random_range(-bound..bound));
            }
            out.extend(std::iter::repeat(0.0).take(o));
        }
        out
    }

    /// Records the network on the tape with parameter leaves cut from `params`,
    /// returning the binding. Panics if `params` has the wrong length (callers
    /// validate through [`MlpSpec::forward`] or their own entry points).
    pub fn build(&self, g: &mut Graph, params: &[f64], input: NodeId) -> MlpBinding {
        assert_eq!(params.len(), self.param_count(), "MlpSpec::build params length");
        let mut weight_nodes = Vec::with_capacity(self.n_layers());
        let mut bias_nodes = Vec::with_capacity(self.n_layers());
        let mut hidden_activations = Vec::with_capacity(self.n_layers() - 1);
        let mut x = input;
        let mut off = 0;
        let last = self.n_layers() - 1;
        for (l, (i, o)) in self.layer_dims().enumerate() {
            let w = g.param(&params[off..off + o * i], o, i);
            off += o * i;
            let b = g.param(&params[off..off + o], 1, o);
            off += o;
            weight_nodes.push(w);
            bias_nodes.push(b);
            x = g.linear(x, w, b);
            if l != last {
                x = g.tanh(x);
                hidden_activations.push(x);
            }
        }
        MlpBinding {
            weight_nodes,
            bias_nodes,
            hidden_activations,
            output: x,
        }
    }

    /// Checked batched forward pass outside any gradient context.
    pub fn forward(&self, params: &[f64], input: &Mat) -> Result<Mat, ApproxError> {
        if params.len() != self.param_count() {
            return Err(ApproxError::DimensionMismatch {
                context: "MlpSpec::forward params",
                expected: self.param_count().to_string(),
                got: params.len().to_string(),
            });
        }
        if input.cols() != self.input_dim() {
            return Err(ApproxError::DimensionMismatch {
                context: "MlpSpec::forward input",
                expected: self.input_dim().to_string(),
                got: input.cols().to_string(),
            });
        }
        if !input.is_finite() {
            return Err(ApproxError::NonFinite {
                context: "MlpSpec::forward input",
            });
        }
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let binding = self.build(&mut g, params, x);
        Ok(g.value(binding.output).clone())
    }

    /// Adds layer-leaf gradients (already on the tape) into a flat gradient
    /// slice aligned with this spec's parameter ordering.
    pub fn accumulate_grads(
        &self,
        grads: &super::Gradients,
        binding: &MlpBinding,
        out: &mut [f64],
    ) {
        assert_eq!(out.len(), self.param_count(), "accumulate_grads length");
        let mut off = 0;
        for (l, (i, o)) in self.layer_dims().enumerate() {
            if let Some(gw) = grads.wrt(binding.weight_nodes[l]) {
                for (dst, &src) in out[off..off + o * i].iter_mut().zip(gw.data()) {
                    *dst += src;
                }
            }
            off += o * i;
            if let Some(gb) = grads.wrt(binding.bias_nodes[l]) {
                for (dst, &src) in out[off..off + o].iter_mut().zip(gb.data()) {
                    *dst += src;
                }
            }
            off += o;
        }
    }
}

/// Diagonal-Gaussian output head: the wrapped network emits `2·dim` columns,
/// split into a mean block and a log-std block (clamped on the tape).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaussianHead {
    pub net: MlpSpec,
    dim: usize,
}

impl GaussianHead {
    /// Network from `input_dim` through `hidden` tanh layers to `2·out_dim`.
    pub fn new(input_dim: usize, hidden: &[usize], out_dim: usize) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * out_dim);
        GaussianHead {
            net: MlpSpec::new(&sizes),
            dim: out_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.dim
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Builds the head on the tape, returning `(mean, clamped log_std, binding)`.
    pub fn build(
        &self,
        g: &mut Graph,
        params: &[f64],
        input: NodeId,
    ) -> (NodeId, NodeId, MlpBinding) {
        let binding = self.net.build(g, params, input);
        let mean = g.slice_cols(binding.output, 0, self.dim);
        let raw = g.slice_cols(binding.output, self.dim, self.dim);
        let log_std = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        (mean, log_std, binding)
    }

    /// Checked batched `(mean, log_std)` evaluation outside a gradient context.
    pub fn mean_log_std(&self, params: &[f64], input: &Mat) -> Result<(Mat, Mat), ApproxError> {
        let raw = self.net.forward(params, input)?;
        let b = raw.rows();
        let mut mean = Mat::zeros(b, self.dim);
        let mut log_std = Mat::zeros(b, self.dim);
        for r in 0..b {
            for d in 0..self.dim {
                mean.set(r, d, raw.get(r, d));
                log_std.set(r, d, raw.get(r, self.dim + d).clamp(LOG_STD_MIN, LOG_STD_MAX));
            }
        }
        Ok((mean, log_std))
    }

    /// Log-density of `x` (one row per batch element) under the head at `input`.
    pub fn log_prob(
        &self,
        params: &[f64],
        input: &Mat,
        x: &Mat,
    ) -> Result<Vec<f64>, ApproxError> {
        let (mean, log_std) = self.mean_log_std(params, input)?;
        if x.rows() != mean.rows() || x.cols() != self.dim {
            return Err(ApproxError::DimensionMismatch {
                context: "GaussianHead::log_prob observation",
                expected: format!("{}×{}", mean.rows(), self.dim),
                got: format!("{}×{}", x.rows(), x.cols()),
            });
        }
        Ok((0..x.rows())
            .map(|r| diag_gaussian_logp(mean.row(r), log_std.row(r), x.row(r)))
            .collect())
    }
}

/// Log-density of a diagonal Gaussian, shared by tape-free evaluation paths.
pub(crate) fn diag_gaussian_logp(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    const LN_2PI: f64 = 1.837877066409345483560659472811;
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((&mu, &l), &xv)| {
            let z = (xv - mu) * (-l).exp();
            -0.5 * z * z - l - 0.5 * LN_2PI
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{central_difference, max_rel_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_matches_manual_two_layer_computation() {
        // 2→2→1 with hand-chosen weights; oracle computed by explicit arithmetic.
        let spec = MlpSpec::new(&[2, 2, 1]);
        // w0 = [[1, 2], [0, -1]], b0 = [0.5, 0], w1 = [[3, 1]], b1 = [-0.25]
        let params = vec![1.0, 2.0, 0.0, -1.0, 0.5, 0.0, 3.0, 1.0, -0.25];
        let x = Mat::from_row(&[0.3, -0.2]);
        let out = spec.forward(&params, &x).unwrap();
        let h0 = (0.3 + 2.0 * (-0.2) + 0.5_f64).tanh();
        let h1 = (0.2_f64).tanh();
        let expect = 3.0 * h0 + h1 - 0.25;
        assert!((out.get(0, 0) - expect).abs() < 1e-14);
    }

    #[test]
    fn mlp_scalar_loss_gradient_matches_central_differences() {
        let spec = MlpSpec::new(&[3, 5, 4, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let params = spec.init_params(&mut rng);
        let input = Mat::from_rows(&[
            vec![0.2, -0.7, 1.1],
            vec![-0.4, 0.0, 0.3],
            vec![0.9, 0.5, -1.2],
        ]);

        // Loss: mean of squared outputs (smooth, exercises every layer).
        let loss_of = |p: &[f64]| {
            let out = spec.forward(p, &input).unwrap();
            out.data().iter().map(|v| v * v).sum::<f64>() / out.data().len() as f64
        };

        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let binding = spec.build(&mut g, &params, x);
        let sq = g.mul(binding.output, binding.output);
        let loss = g.mean_all(sq);
        let grads = g.backward(loss);
        let mut analytic = vec![0.0; spec.param_count()];
        spec.accumulate_grads(&grads, &binding, &mut analytic);

        let numeric = central_difference(loss_of, &params, 1e-5);
        let err = max_rel_error(&analytic, &numeric);
        assert!(err <= 1e-4, "max relative error {err:.3e}");
    }

    #[test]
    fn gaussian_head_log_prob_gradient_matches_central_differences() {
        let head = GaussianHead::new(2, &[6], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = head.net.init_params(&mut rng);
        let input = Mat::from_rows(&[vec![0.4, -0.1], vec![-0.8, 0.6]]);
        let obs = Mat::from_rows(&[vec![0.1, 0.2, -0.3], vec![0.5, -0.5, 0.0]]);

        let loss_of = |p: &[f64]| {
            let lp = head.log_prob(p, &input, &obs).unwrap();
            -lp.iter().sum::<f64>() / lp.len() as f64
        };

        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let (mean, log_std, binding) = head.build(&mut g, &params, x);
        let lp = g.gaussian_logp(mean, log_std, obs.clone());
        let neg = g.affine(lp, -1.0, 0.0);
        let loss = g.mean_all(neg);
        let grads = g.backward(loss);
        let mut analytic = vec![0.0; head.param_count()];
        head.net.accumulate_grads(&grads, &binding, &mut analytic);

        let numeric = central_difference(loss_of, &params, 1e-5);
        let err = max_rel_error(&analytic, &numeric);
        assert!(err <= 1e-4, "max relative error {err:.3e}");
    }

    #[test]
    fn forward_rejects_bad_shapes_and_non_finite_input() {
        let spec = MlpSpec::new(&[2, 3]);
        let params = vec![0.0; spec.param_count()];
        let wrong = Mat::from_row(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            spec.forward(&params, &wrong),
            Err(ApproxError::DimensionMismatch { .. })
        ));
        let nan = Mat::from_row(&[f64::NAN, 0.0]);
        assert!(matches!(
            spec.forward(&params, &nan),
            Err(ApproxError::NonFinite { .. })
        ));
        assert!(spec
            .forward(&params[..params.len() - 1], &Mat::from_row(&[1.0, 2.0]))
            .is_err());
    }
}
