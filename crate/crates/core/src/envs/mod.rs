//! Environments and state-only demonstrations.
//!
//! Both environments are *pure*: a step is a function of `(state, action)` with
//! no hidden mutable state, so every rollout is reproducible from its seed.
//! [`EnvKind`] is the uniform vector-state facade the trainer works against;
//! dense-index views for the exact MDP machinery come from
//! [`GridWorld::to_finite_mdp`].

mod demo;
mod grid;
mod point_mass;

pub use demo::{collect_demonstrations, expert_demonstrations, Demonstration};
pub use grid::{Direction, GridWorld, GRID_CELLS, GRID_SIDE};
pub use point_mass::{ActionTransform, PointMass, BASE_ACTION_DIM};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Errors for demonstration handling and environment facades.
#[derive(Debug, Error)]
pub enum EnvError {
    #[error("malformed demonstration data: {reason}")]
    MalformedDemo { reason: String },
    #[error(
        "demonstration {trajectory}, step {step}: transition is not realizable by any action"
    )]
    InfeasibleTransition { trajectory: usize, step: usize },
    #[error("demonstration states have dimension {got}, environment expects {expected}")]
    StateDimMismatch { expected: usize, got: usize },
    #[error("trajectory shorter than two states (index {trajectory})")]
    DegenerateTrajectory { trajectory: usize },
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

/// An action as the trainer sees it: a dense index or a raw continuous vector.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionVal {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl ActionVal {
    pub fn as_discrete(&self) -> usize {
        match self {
            ActionVal::Discrete(a) => *a,
            ActionVal::Continuous(_) => panic!("expected a discrete action"),
        }
    }

    pub fn as_continuous(&self) -> &[f64] {
        match self {
            ActionVal::Continuous(v) => v,
            ActionVal::Discrete(_) => panic!("expected a continuous action"),
        }
    }
}

/// One environment step as stored in replay buffers. `done` records true
/// task termination (goal reached), which is what bootstrapping must respect
/// even when the data-collection loop keeps rolling to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: ActionVal,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Uniform vector-state facade over the two environments.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvKind {
    Grid(GridWorld),
    PointMass(PointMass),
}

impl EnvKind {
    /// Stable identifier recorded in demonstrations and manifests.
    pub fn id(&self) -> String {
        match self {
            EnvKind::Grid(g) => format!("grid6x6-k{}", g.k),
            EnvKind::PointMass(p) => {
                let t = match p.transform {
                    ActionTransform::Normal => "normal",
                    ActionTransform::Inverted => "inverted",
                    ActionTransform::ComplexDouble => "complex_double",
                };
                format!("point_mass-{t}")
            }
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvKind::Grid(_) => 2,
            EnvKind::PointMass(p) => p.state_dim(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvKind::Grid(g) => g.horizon,
            EnvKind::PointMass(p) => p.horizon,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, EnvKind::Grid(_))
    }

    /// Start state for training and evaluation episodes.
    pub fn sample_start(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            EnvKind::Grid(g) => g.state_vec(g.sample_start(rng)),
            EnvKind::PointMass(p) => p.sample_start(rng),
        }
    }

    /// Start state for demonstration episodes (the expert's own start
    /// distribution: the fixed corner for the grid, the start box otherwise).
    pub fn demo_start(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            EnvKind::Grid(g) => g.state_vec((0, 0)),
            EnvKind::PointMass(p) => p.sample_start(rng),
        }
    }

    /// One deterministic environment step.
    pub fn step(&self, state: &[f64], action: &ActionVal) -> Vec<f64> {
        match self {
            EnvKind::Grid(g) => {
                let cell = g.cell_of_state(state);
                g.state_vec(g.step_cell(cell, action.as_discrete()))
            }
            EnvKind::PointMass(p) => p.step(state, action.as_continuous()),
        }
    }

    /// State-transition reward: 1 exactly on entering (or remaining in) the
    /// goal set, else 0.
    pub fn reward(&self, _state: &[f64], next: &[f64]) -> f64 {
        if self.reached_goal(next) {
            1.0
        } else {
            0.0
        }
    }

    /// Goal predicate used for evaluation-time termination and success.
    pub fn reached_goal(&self, state: &[f64]) -> bool {
        match self {
            EnvKind::Grid(g) => g.cell_of_state(state) == g.goal,
            EnvKind::PointMass(p) => p.at_goal(state),
        }
    }

    /// The expert's action in this environment's own action semantics.
    pub fn expert_action(&self, state: &[f64], rng: &mut ChaCha8Rng) -> ActionVal {
        match self {
            EnvKind::Grid(g) => {
                let idx = g.index_of(g.cell_of_state(state));
                ActionVal::Discrete(g.expert_policy_row_sample(idx, rng))
            }
            EnvKind::PointMass(p) => ActionVal::Continuous(p.expert_action(state)),
        }
    }

    /// Uniformly random raw action (exploration / witness data collection).
    pub fn random_action(&self, rng: &mut ChaCha8Rng) -> ActionVal {
        use rand::Rng;
        match self {
            EnvKind::Grid(g) => ActionVal::Discrete(rng.random_range(0..g.n_actions())),
            EnvKind::PointMass(p) => ActionVal::Continuous(
                (0..p.raw_action_dim())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            ),
        }
    }

    /// Checks that every consecutive state pair of `demo` is realizable by
    /// some action of this environment, reporting the first violation.
    pub fn validate_demonstration(&self, demo: &Demonstration) -> Result<(), EnvError> {
        if demo.state_dim != self.state_dim() {
            return Err(EnvError::StateDimMismatch {
                expected: self.state_dim(),
                got: demo.state_dim,
            });
        }
        for (ti, traj) in demo.trajectories.iter().enumerate() {
            if traj.len() < 2 {
                return Err(EnvError::DegenerateTrajectory { trajectory: ti });
            }
            for (si, w) in traj.windows(2).enumerate() {
                let ok = match self {
                    EnvKind::Grid(g) => {
                        let from = g.cell_of_state(&w[0]);
                        let to = g.cell_of_state(&w[1]);
                        (0..g.n_actions()).any(|a| g.step_cell(from, a) == to)
                    }
                    EnvKind::PointMass(p) => p.inverse_action(&w[0], &w[1]).is_some(),
                };
                if !ok {
                    return Err(EnvError::InfeasibleTransition {
                        trajectory: ti,
                        step: si,
                    });
                }
            }
        }
        Ok(())
    }
}

impl GridWorld {
    /// Samples an expert action for the dense state index (helper for the
    /// vector-state facade).
    pub fn expert_policy_row_sample(&self, idx: usize, rng: &mut ChaCha8Rng) -> usize {
        use rand::Rng;
        let dir = self.expert_direction(self.cell_of(idx)) as usize;
        let rep = rng.random_range(0..self.k);
        dir + 4 * rep
    }
}
