//! The decoupled policy: a state planner composed with an inverse dynamics
//! model, in tabular (grid) and diagonal-Gaussian (point-mass) variants.
//!
//! Action selection is two-stage: draw a desired successor `ŝ' ~ h_ψ(·|s)`,
//! then an action `a ~ I_φ(·|s, ŝ')`. Deterministic evaluation replaces both
//! draws with the mode (tabular argmax) or mean (Gaussian).

use super::DepoError;
use crate::approx::{standard_normal, Checkpoint, GaussianHead, Layout, Mat, ParamVector};
use crate::envs::ActionVal;
use crate::mdp::sample_categorical;
use rand::Rng;

/// Minimum number of planner samples used to Monte-Carlo-marginalize the
/// composed density `π(a|s) = E_{ŝ'}[I_φ(a|s,ŝ')]` in continuous mode, where
/// the marginal has no closed form. Callers may ask for more, never fewer.
pub const MIN_MARGINAL_SAMPLES: usize = 16;

/// Name of the single logit slice inside tabular parameter vectors.
pub const LOGITS_SLICE: &str = "logits";

/// Grid-mode policy: planner logits are an `n_states × n_states` table
/// (categorical over *all* states, so an untrained or mistrained planner can
/// place mass on unreachable cells and we can observe it); inverse-dynamics
/// logits are an `(n_states·n_states) × n_actions` table indexed by the
/// `(s, s')` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDecoupled {
    pub side: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub planner: ParamVector,
    pub invdyn: ParamVector,
}

/// Continuous-mode policy: both modules are diagonal-Gaussian MLP heads. The
/// planner maps `s → ŝ'`; the inverse dynamics maps `(s, s') → a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousDecoupled {
    pub state_dim: usize,
    pub action_dim: usize,
    pub planner_head: GaussianHead,
    pub invdyn_head: GaussianHead,
    pub planner: ParamVector,
    pub invdyn: ParamVector,
}

/// A state planner `h_ψ(s'|s)` plus an inverse dynamics model `I_φ(a|s,s')`.
#[derive(Debug, Clone, PartialEq)]
pub enum DecoupledPolicy {
    Tabular(TabularDecoupled),
    Continuous(ContinuousDecoupled),
}

impl DecoupledPolicy {
    /// Uniform-initialized tabular policy over a `side × side` cell grid.
    pub fn tabular(side: usize, n_actions: usize) -> Self {
        let n_states = side * side;
        let planner = ParamVector::zeros(Layout::new(&[(LOGITS_SLICE, n_states * n_states)]));
        let invdyn =
            ParamVector::zeros(Layout::new(&[(LOGITS_SLICE, n_states * n_states * n_actions)]));
        DecoupledPolicy::Tabular(TabularDecoupled {
            side,
            n_states,
            n_actions,
            planner,
            invdyn,
        })
    }

    /// Randomly initialized continuous policy with the given hidden widths.
    pub fn continuous<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        planner_hidden: &[usize],
        invdyn_hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let planner_head = GaussianHead::new(state_dim, planner_hidden, state_dim);
        let invdyn_head = GaussianHead::new(2 * state_dim, invdyn_hidden, action_dim);
        let planner = head_params(&planner_head, rng);
        let invdyn = head_params(&invdyn_head, rng);
        DecoupledPolicy::Continuous(ContinuousDecoupled {
            state_dim,
            action_dim,
            planner_head,
            invdyn_head,
            planner,
            invdyn,
        })
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self, DecoupledPolicy::Tabular(_))
    }

    pub fn planner_params(&self) -> &ParamVector {
        match self {
            DecoupledPolicy::Tabular(t) => &t.planner,
            DecoupledPolicy::Continuous(c) => &c.planner,
        }
    }

    pub fn planner_params_mut(&mut self) -> &mut ParamVector {
        match self {
            DecoupledPolicy::Tabular(t) => &mut t.planner,
            DecoupledPolicy::Continuous(c) => &mut c.planner,
        }
    }

    pub fn invdyn_params(&self) -> &ParamVector {
        match self {
            DecoupledPolicy::Tabular(t) => &t.invdyn,
            DecoupledPolicy::Continuous(c) => &c.invdyn,
        }
    }

    pub fn invdyn_params_mut(&mut self) -> &mut ParamVector {
        match self {
            DecoupledPolicy::Tabular(t) => &mut t.invdyn,
            DecoupledPolicy::Continuous(c) => &mut c.invdyn,
        }
    }

    /// Dense state index of a `[x, y]` grid state vector (tabular mode only).
    pub fn state_index(&self, state: &[f64]) -> usize {
        let t = self.expect_tabular("state_index");
        let x = state[0].round() as usize;
        let y = state[1].round() as usize;
        assert!(x < t.side && y < t.side, "grid state out of range");
        y * t.side + x
    }

    /// `[x, y]` vector form of a dense state index (tabular mode only).
    pub fn state_of_index(&self, idx: usize) -> Vec<f64> {
        let t = self.expect_tabular("state_of_index");
        vec![(idx % t.side) as f64, (idx / t.side) as f64]
    }

    /// Planner distribution `h_ψ(·|s)` over all states (tabular mode only).
    pub fn planner_probs(&self, s_idx: usize) -> Vec<f64> {
        let t = self.expect_tabular("planner_probs");
        let logits = t.planner.slice(LOGITS_SLICE).expect("planner slice");
        softmax(&logits[s_idx * t.n_states..(s_idx + 1) * t.n_states])
    }

    /// Inverse-dynamics distribution `I_φ(·|s, s')` (tabular mode only).
    pub fn invdyn_probs(&self, s_idx: usize, next_idx: usize) -> Vec<f64> {
        let t = self.expect_tabular("invdyn_probs");
        let logits = t.invdyn.slice(LOGITS_SLICE).expect("invdyn slice");
        let row = s_idx * t.n_states + next_idx;
        softmax(&logits[row * t.n_actions..(row + 1) * t.n_actions])
    }

    /// Exactly composed action distribution
    /// `π(a|s) = Σ_{s'} h_ψ(s'|s) · I_φ(a|s,s')` (tabular mode only).
    pub fn compose_row(&self, s_idx: usize) -> Vec<f64> {
        let t = self.expect_tabular("compose_row");
        let h = self.planner_probs(s_idx);
        let mut out = vec![0.0; t.n_actions];
        for (next_idx, &hp) in h.iter().enumerate() {
            if hp == 0.0 {
                continue;
            }
            for (a, &ip) in self.invdyn_probs(s_idx, next_idx).iter().enumerate() {
                out[a] += hp * ip;
            }
        }
        out
    }

    /// One stochastic planner draw `ŝ' ~ h_ψ(·|s)`.
    pub fn plan_stochastic<R: Rng>(&self, state: &[f64], rng: &mut R) -> Vec<f64> {
        match self {
            DecoupledPolicy::Tabular(_) => {
                let s_idx = self.state_index(state);
                let probs = self.planner_probs(s_idx);
                self.state_of_index(sample_categorical(&probs, rng))
            }
            DecoupledPolicy::Continuous(c) => {
                let (mean, log_std) = c
                    .planner_head
                    .mean_log_std(&c.planner.values, &Mat::from_row(state))
                    .expect("planner forward");
                (0..c.state_dim)
                    .map(|d| {
                        mean.get(0, d) + log_std.get(0, d).exp() * standard_normal(rng)
                    })
                    .collect()
            }
        }
    }

    /// Deterministic planner evaluation: argmax (tabular) or mean (Gaussian).
    pub fn plan_deterministic(&self, state: &[f64]) -> Vec<f64> {
        match self {
            DecoupledPolicy::Tabular(_) => {
                let s_idx = self.state_index(state);
                self.state_of_index(argmax(&self.planner_probs(s_idx)))
            }
            DecoupledPolicy::Continuous(c) => {
                let (mean, _) = c
                    .planner_head
                    .mean_log_std(&c.planner.values, &Mat::from_row(state))
                    .expect("planner forward");
                mean.row(0).to_vec()
            }
        }
    }

    /// One stochastic inverse-dynamics draw `a ~ I_φ(·|s, target)`.
    pub fn invdyn_stochastic<R: Rng>(
        &self,
        state: &[f64],
        target: &[f64],
        rng: &mut R,
    ) -> ActionVal {
        match self {
            DecoupledPolicy::Tabular(_) => {
                let s_idx = self.state_index(state);
                let n_idx = self.state_index(target);
                let probs = self.invdyn_probs(s_idx, n_idx);
                ActionVal::Discrete(sample_categorical(&probs, rng))
            }
            DecoupledPolicy::Continuous(c) => {
                let input = concat(state, target);
                let (mean, log_std) = c
                    .invdyn_head
                    .mean_log_std(&c.invdyn.values, &Mat::from_row(&input))
                    .expect("invdyn forward");
                ActionVal::Continuous(
                    (0..c.action_dim)
                        .map(|d| {
                            mean.get(0, d) + log_std.get(0, d).exp() * standard_normal(rng)
                        })
                        .collect(),
                )
            }
        }
    }

    /// Deterministic inverse-dynamics evaluation: argmax or mean.
    pub fn invdyn_deterministic(&self, state: &[f64], target: &[f64]) -> ActionVal {
        match self {
            DecoupledPolicy::Tabular(_) => {
                let s_idx = self.state_index(state);
                let n_idx = self.state_index(target);
                ActionVal::Discrete(argmax(&self.invdyn_probs(s_idx, n_idx)))
            }
            DecoupledPolicy::Continuous(c) => {
                let input = concat(state, target);
                let (mean, _) = c
                    .invdyn_head
                    .mean_log_std(&c.invdyn.values, &Mat::from_row(&input))
                    .expect("invdyn forward");
                ActionVal::Continuous(mean.row(0).to_vec())
            }
        }
    }

    /// Two-stage stochastic action: plan, then act toward the plan. Returns
    /// the action together with the planned state for diagnostics.
    pub fn act<R: Rng>(&self, state: &[f64], rng: &mut R) -> (ActionVal, Vec<f64>) {
        let planned = self.plan_stochastic(state, rng);
        let action = self.invdyn_stochastic(state, &planned, rng);
        (action, planned)
    }

    /// Two-stage deterministic action (evaluation mode).
    pub fn act_deterministic(&self, state: &[f64]) -> (ActionVal, Vec<f64>) {
        let planned = self.plan_deterministic(state);
        let action = self.invdyn_deterministic(state, &planned);
        (action, planned)
    }

    /// Log of the composed density `π(a|s)`.
    ///
    /// Tabular mode composes exactly. Continuous mode has no closed form, so
    /// the planner is marginalized by Monte Carlo with
    /// `max(n_samples, MIN_MARGINAL_SAMPLES)` draws — an approximation whose
    /// sample count is the caller's accuracy knob.
    pub fn log_pi<R: Rng>(
        &self,
        state: &[f64],
        action: &ActionVal,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<f64, DepoError> {
        match self {
            DecoupledPolicy::Tabular(_) => {
                let s_idx = self.state_index(state);
                let p = self.compose_row(s_idx)[action.as_discrete()];
                Ok(p.max(f64::MIN_POSITIVE).ln())
            }
            DecoupledPolicy::Continuous(c) => {
                let k = n_samples.max(MIN_MARGINAL_SAMPLES);
                let mut inputs = Mat::zeros(k, 2 * c.state_dim);
                for row in 0..k {
                    let planned = self.plan_stochastic(state, rng);
                    for (d, &v) in state.iter().chain(planned.iter()).enumerate() {
                        inputs.set(row, d, v);
                    }
                }
                let mut obs = Mat::zeros(k, c.action_dim);
                for row in 0..k {
                    for (d, &v) in action.as_continuous().iter().enumerate() {
                        obs.set(row, d, v);
                    }
                }
                let logps = c
                    .invdyn_head
                    .log_prob(&c.invdyn.values, &inputs, &obs)
                    .map_err(DepoError::Approx)?;
                Ok(log_sum_exp(&logps) - (k as f64).ln())
            }
        }
    }

    /// Serializes both modules into a named-section checkpoint.
    pub fn checkpoint(&self, meta: &str) -> Checkpoint {
        let mut cp = Checkpoint::new(meta.to_string());
        cp.push("planner", self.planner_params().clone());
        cp.push("invdyn", self.invdyn_params().clone());
        cp
    }

    /// Overwrites the planner parameters bit-for-bit from `src` (the transfer
    /// path: keep the planner, retrain everything else).
    pub fn load_planner_params(&mut self, src: &ParamVector) -> Result<(), DepoError> {
        let dst = self.planner_params_mut();
        if src.len() != dst.len() {
            return Err(DepoError::LengthMismatch {
                context: "load_planner_params",
                expected: dst.len(),
                got: src.len(),
            });
        }
        dst.values.copy_from_slice(&src.values);
        Ok(())
    }

    /// Overwrites the inverse-dynamics parameters bit-for-bit from `src`
    /// (checkpoint restoration).
    pub fn load_invdyn_params(&mut self, src: &ParamVector) -> Result<(), DepoError> {
        let dst = self.invdyn_params_mut();
        if src.len() != dst.len() {
            return Err(DepoError::LengthMismatch {
                context: "load_invdyn_params",
                expected: dst.len(),
                got: src.len(),
            });
        }
        dst.values.copy_from_slice(&src.values);
        Ok(())
    }

    fn expect_tabular(&self, context: &'static str) -> &TabularDecoupled {
        match self {
            DecoupledPolicy::Tabular(t) => t,
            DecoupledPolicy::Continuous(_) => {
                panic!("{context} is only defined for tabular policies")
            }
        }
    }
}

fn head_params<R: Rng>(head: &GaussianHead, rng: &mut R) -> ParamVector {
    let parts = head.net.layout_parts();
    let borrowed: Vec<(&str, usize)> = parts.iter().map(|(n, c)| (n.as_str(), *c)).collect();
    ParamVector::from_values(Layout::new(&borrowed), head.net.init_params(rng))
        .expect("layout length matches init length")
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

/// `ln Σ exp(xs)` without overflow.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Index of the first maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_tabular_policy_composes_to_uniform_actions() {
        let p = DecoupledPolicy::tabular(6, 4);
        let row = p.compose_row(17);
        for &v in &row {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_modules_compose_to_the_unique_action() {
        let mut p = DecoupledPolicy::tabular(3, 2);
        // Planner at state 0 committed to state 1; I(·|0,1) committed to action 1.
        if let DecoupledPolicy::Tabular(t) = &mut p {
            t.planner.slice_mut(LOGITS_SLICE).unwrap()[1] = 40.0;
            let pair_row = 1; // (s=0, s'=1)
            t.invdyn.slice_mut(LOGITS_SLICE).unwrap()[pair_row * t.n_actions + 1] = 40.0;
        }
        let row = p.compose_row(0);
        assert!(row[1] > 1.0 - 1e-9, "composed mass {row:?}");
        let (a, planned) = p.act_deterministic(&[0.0, 0.0]);
        assert_eq!(a.as_discrete(), 1);
        assert_eq!(p.state_index(&planned), 1);
    }

    #[test]
    fn half_half_planner_with_unique_actions_splits_mass() {
        let mut p = DecoupledPolicy::tabular(2, 2);
        if let DecoupledPolicy::Tabular(t) = &mut p {
            // h(1|0) = h(2|0) = 0.5; I(·|0,1) one-hot on 0, I(·|0,2) one-hot on 1.
            let logits = t.planner.slice_mut(LOGITS_SLICE).unwrap();
            logits[1] = 40.0;
            logits[2] = 40.0;
            let inv = t.invdyn.slice_mut(LOGITS_SLICE).unwrap();
            inv[t.n_actions] = 40.0; // pair (0,1) → action 0
            inv[2 * t.n_actions + 1] = 40.0; // pair (0,2) → action 1
        }
        let row = p.compose_row(0);
        assert!((row[0] - 0.5).abs() < 1e-9 && (row[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn composed_rows_are_distributions_for_random_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = DecoupledPolicy::tabular(6, 8);
        if let DecoupledPolicy::Tabular(t) = &mut p {
            for v in &mut t.planner.values {
                *v = rng.random_range(-2.0..2.0);
            }
            for v in &mut t.invdyn.values {
                *v = rng.random_range(-2.0..2.0);
            }
        }
        for s in 0..36 {
            let sum: f64 = p.compose_row(s).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "state {s}: sum {sum}");
        }
    }

    #[test]
    fn tabular_log_pi_matches_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = DecoupledPolicy::tabular(6, 4);
        if let DecoupledPolicy::Tabular(t) = &mut p {
            for v in &mut t.planner.values {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let lp = p
            .log_pi(&[2.0, 3.0], &ActionVal::Discrete(1), 1, &mut rng)
            .unwrap();
        let direct = p.compose_row(p.state_index(&[2.0, 3.0]))[1].ln();
        assert!((lp - direct).abs() < 1e-12);
    }

    #[test]
    fn continuous_log_pi_is_finite_and_ranks_mode_above_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = DecoupledPolicy::continuous(2, 2, &[8], &[8], &mut rng);
        let s = [0.3, -0.2];
        let planned = p.plan_deterministic(&s);
        let mode = p.invdyn_deterministic(&s, &planned);
        let lp_mode = p.log_pi(&s, &mode, 64, &mut rng).unwrap();
        let lp_tail = p
            .log_pi(&s, &ActionVal::Continuous(vec![25.0, -25.0]), 64, &mut rng)
            .unwrap();
        assert!(lp_mode.is_finite());
        assert!(lp_mode > lp_tail);
    }

    #[test]
    fn planner_transfer_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let donor = DecoupledPolicy::continuous(4, 2, &[16, 16], &[16], &mut rng);
        let mut receiver = DecoupledPolicy::continuous(4, 2, &[16, 16], &[16], &mut rng);
        receiver
            .load_planner_params(donor.planner_params())
            .unwrap();
        let a: Vec<u64> = donor.planner_params().values.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = receiver
            .planner_params()
            .values
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_preserves_sections() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = DecoupledPolicy::continuous(4, 2, &[8], &[8], &mut rng);
        let cp = p.checkpoint("test policy");
        let bytes = cp.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.section("planner").unwrap(), p.planner_params());
        assert_eq!(back.section("invdyn").unwrap(), p.invdyn_params());
    }
}
