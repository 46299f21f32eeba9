//! Deterministic 2-D point mass with remappable action semantics.
//!
//! State is `[px, py, vx, vy]`; a raw action is clipped to the unit box, passed
//! through the environment's [`ActionTransform`] into an effective
//! acceleration, and integrated with explicit Euler:
//! `p' = p + v·dt`, `v' = clip(v + a_eff·dt, ±v_max)`.
//! The goal is the disc of radius `goal_radius` around the origin.
//!
//! Transforms let several environments share identical *state* dynamics while
//! disagreeing about what actions mean — the lever used by the transfer and
//! co-training experiments:
//! * `Normal`: `a_eff = a`;
//! * `Inverted`: `a_eff = −a`;
//! * `ComplexDouble`: the raw action doubles to 4-D and each effective
//!   coordinate is `(−exp(a_lo + 1) + exp(a_hi)) / 1.5` — a redundant,
//!   non-linear mapping whose achievable set still covers the unit box.

use rand::Rng;

/// Base (effective) action dimensionality.
pub const BASE_ACTION_DIM: usize = 2;

/// How raw actions map to effective accelerations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionTransform {
    Normal,
    Inverted,
    ComplexDouble,
}

impl ActionTransform {
    /// Dimensionality of the raw action this transform consumes.
    pub fn raw_dim(&self) -> usize {
        match self {
            ActionTransform::Normal | ActionTransform::Inverted => BASE_ACTION_DIM,
            ActionTransform::ComplexDouble => 2 * BASE_ACTION_DIM,
        }
    }

    /// Effective acceleration from a raw (already clipped) action.
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        assert_eq!(raw.len(), self.raw_dim(), "raw action dimension");
        match self {
            ActionTransform::Normal => raw.to_vec(),
            ActionTransform::Inverted => raw.iter().map(|&a| -a).collect(),
            ActionTransform::ComplexDouble => (0..BASE_ACTION_DIM)
                .map(|d| {
                    let lo = raw[d];
                    let hi = raw[BASE_ACTION_DIM + d];
                    (-(lo + 1.0).exp() + hi.exp()) / 1.5
                })
                .collect(),
        }
    }

    /// A canonical raw action realizing the effective acceleration `eff`,
    /// clipped into the unit box where the exact preimage would leave it.
    /// For `ComplexDouble` the preimage is a one-parameter family; the branch
    /// pinning one coordinate to −1 is chosen so that the whole interval of
    /// achievable-from-the-box accelerations stays representable.
    pub fn invert(&self, eff: &[f64]) -> Vec<f64> {
        assert_eq!(eff.len(), BASE_ACTION_DIM, "effective action dimension");
        match self {
            ActionTransform::Normal => eff.iter().map(|&e| e.clamp(-1.0, 1.0)).collect(),
            ActionTransform::Inverted => eff.iter().map(|&e| (-e).clamp(-1.0, 1.0)).collect(),
            ActionTransform::ComplexDouble => {
                let mut raw = vec![0.0; 4];
                for d in 0..BASE_ACTION_DIM {
                    let e = eff[d];
                    // Branch threshold where both box corners meet: the value
                    // reachable with a_lo = −1, a_hi = −1.
                    let threshold = ((-1.0f64).exp() - 1.0) / 1.5;
                    let (lo, hi) = if e >= threshold {
                        // Pin a_lo = −1: need exp(a_hi) = 1.5e + 1.
                        (-1.0, (1.5 * e + 1.0).max(f64::MIN_POSITIVE).ln())
                    } else {
                        // Pin a_hi = −1: need exp(a_lo + 1) = e^{−1} − 1.5e.
                        (
                            ((-1.0f64).exp() - 1.5 * e).max(f64::MIN_POSITIVE).ln() - 1.0,
                            -1.0,
                        )
                    };
                    raw[d] = lo.clamp(-1.0, 1.0);
                    raw[BASE_ACTION_DIM + d] = hi.clamp(-1.0, 1.0);
                }
                raw
            }
        }
    }
}

/// Deterministic point-mass environment.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub dt: f64,
    pub v_max: f64,
    pub goal_radius: f64,
    pub horizon: usize,
    /// Half-width of the square start-position box.
    pub start_box: f64,
    pub transform: ActionTransform,
    /// Proportional gain of the built-in expert controller.
    pub kp: f64,
    /// Derivative gain of the built-in expert controller.
    pub kd: f64,
}

impl PointMass {
    /// Standard instance: dt 0.05, speed cap 2, goal radius 0.1, horizon 400,
    /// starts in `[−1,1]²` at rest, critically damped expert gains.
    pub fn new(transform: ActionTransform) -> Self {
        PointMass {
            dt: 0.05,
            v_max: 2.0,
            goal_radius: 0.1,
            horizon: 400,
            start_box: 1.0,
            transform,
            kp: 4.0,
            kd: 4.0,
        }
    }

    pub fn state_dim(&self) -> usize {
        4
    }

    pub fn raw_action_dim(&self) -> usize {
        self.transform.raw_dim()
    }

    /// One deterministic step from `state` under raw action `raw`.
    pub fn step(&self, state: &[f64], raw: &[f64]) -> Vec<f64> {
        assert_eq!(state.len(), 4, "point-mass states are 4-dimensional");
        let clipped: Vec<f64> = raw.iter().map(|&a| a.clamp(-1.0, 1.0)).collect();
        let eff = self.transform.apply(&clipped);
        let mut next = vec![0.0; 4];
        for d in 0..2 {
            next[d] = state[d] + state[2 + d] * self.dt;
            next[2 + d] = (state[2 + d] + eff[d] * self.dt).clamp(-self.v_max, self.v_max);
        }
        next
    }

    /// True when the position lies inside the goal disc.
    pub fn at_goal(&self, state: &[f64]) -> bool {
        let r2 = state[0] * state[0] + state[1] * state[1];
        r2 <= self.goal_radius * self.goal_radius
    }

    /// Uniform start position in the box, zero velocity.
    pub fn sample_start<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let b = self.start_box;
        vec![
            rng.random_range(-b..b),
            rng.random_range(-b..b),
            0.0,
            0.0,
        ]
    }

    /// PD expert steering to the origin, phrased in *effective* acceleration
    /// and mapped back through the transform so it is an expert in this
    /// environment's own action semantics.
    pub fn expert_action(&self, state: &[f64]) -> Vec<f64> {
        let eff: Vec<f64> = (0..2)
            .map(|d| (-self.kp * state[d] - self.kd * state[2 + d]).clamp(-1.0, 1.0))
            .collect();
        self.transform.invert(&eff)
    }

    /// The effective acceleration that explains a transition `state → next`,
    /// or `None` when no action can (position update inconsistent).
    pub fn effective_action_between(&self, state: &[f64], next: &[f64]) -> Option<Vec<f64>> {
        for d in 0..2 {
            if (next[d] - state[d] - state[2 + d] * self.dt).abs() > 1e-9 {
                return None;
            }
        }
        Some(
            (0..2)
                .map(|d| (next[2 + d] - state[2 + d]) / self.dt)
                .collect(),
        )
    }

    /// Raw action whose step from `state` best realizes the velocity block of
    /// `desired_next`. The position block is ignored because the dynamics
    /// determine it from `state` alone, so this is a total relaxation of
    /// [`Self::inverse_action`]: on dynamically feasible pairs the two agree,
    /// and on infeasible pairs (e.g. a learned planner's prediction) this
    /// still returns the best-effort action.
    pub fn matching_action(&self, state: &[f64], desired_next: &[f64]) -> Vec<f64> {
        let eff: Vec<f64> = (0..2)
            .map(|d| (desired_next[2 + d] - state[2 + d]) / self.dt)
            .collect();
        self.transform.invert(&eff)
    }

    /// Canonical raw action reproducing `state → next` exactly, confirmed by a
    /// forward re-simulation; `None` when the pair is dynamically infeasible.
    pub fn inverse_action(&self, state: &[f64], next: &[f64]) -> Option<Vec<f64>> {
        let eff = self.effective_action_between(state, next)?;
        let raw = self.transform.invert(&eff);
        let redo = self.step(state, &raw);
        let err = redo
            .iter()
            .zip(next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        (err <= 1e-9).then_some(raw)
    }
}
