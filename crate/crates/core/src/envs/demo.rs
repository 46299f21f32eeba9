//! State-only demonstrations: in-memory container, binary round-trip storage,
//! and collection by rolling out a policy.
//!
//! File format (little-endian):
//!
//! ```text
//! magic   "DPD1"                      4 bytes
//! env_id  u32 length + UTF-8
//! dim     u32 state dimension
//! seed    u64 collection seed
//! count   u32 trajectories
//! per trajectory: u32 state count, then count·dim f64 bit patterns
//! ```

use super::{ActionVal, EnvError, EnvKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

/// A batch of state-only expert trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    /// Identifier of the collecting environment.
    pub env_id: String,
    pub state_dim: usize,
    /// Seed used during collection (provenance, not replayed by consumers).
    pub seed: u64,
    /// Each trajectory is an ordered list of states including start and final.
    pub trajectories: Vec<Vec<Vec<f64>>>,
}

const MAGIC: &[u8; 4] = b"DPD1";

impl Demonstration {
    /// All consecutive `(s, s')` pairs across trajectories.
    pub fn pairs(&self) -> Vec<(&[f64], &[f64])> {
        let mut out = Vec::new();
        for traj in &self.trajectories {
            for w in traj.windows(2) {
                out.push((w[0].as_slice(), w[1].as_slice()));
            }
        }
        out
    }

    pub fn n_pairs(&self) -> usize {
        self.trajectories
            .iter()
            .map(|t| t.len().saturating_sub(1))
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.env_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.env_id.as_bytes());
        out.extend_from_slice(&(self.state_dim as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.trajectories.len() as u32).to_le_bytes());
        for traj in &self.trajectories {
            out.extend_from_slice(&(traj.len() as u32).to_le_bytes());
            for state in traj {
                debug_assert_eq!(state.len(), self.state_dim);
                for v in state {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnvError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], EnvError> {
            if *pos + n > bytes.len() {
                return Err(EnvError::MalformedDemo {
                    reason: "unexpected end of data".to_string(),
                });
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(EnvError::MalformedDemo {
                reason: "bad magic".to_string(),
            });
        }
        let id_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let env_id = String::from_utf8(take(&mut pos, id_len)?.to_vec()).map_err(|_| {
            EnvError::MalformedDemo {
                reason: "invalid UTF-8 env id".to_string(),
            }
        })?;
        let state_dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let n_traj = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut trajectories = Vec::with_capacity(n_traj);
        for _ in 0..n_traj {
            let len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut traj = Vec::with_capacity(len);
            for _ in 0..len {
                let mut state = Vec::with_capacity(state_dim);
                for _ in 0..state_dim {
                    state.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
                }
                traj.push(state);
            }
            trajectories.push(traj);
        }
        if pos != bytes.len() {
            return Err(EnvError::MalformedDemo {
                reason: "trailing bytes".to_string(),
            });
        }
        Ok(Demonstration {
            env_id,
            state_dim,
            seed,
            trajectories,
        })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), EnvError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, EnvError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Rolls out `policy` for `n_trajectories` episodes from the demonstration
/// start distribution, recording states only.  Episodes stop at the goal or at
/// the horizon.
pub fn collect_demonstrations<F>(
    env: &EnvKind,
    mut policy: F,
    n_trajectories: usize,
    seed: u64,
) -> Demonstration
where
    F: FnMut(&[f64], &mut ChaCha8Rng) -> ActionVal,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(n_trajectories);
    for _ in 0..n_trajectories {
        let mut state = env.demo_start(&mut rng);
        let mut traj = vec![state.clone()];
        for _ in 0..env.horizon() {
            let action = policy(&state, &mut rng);
            state = env.step(&state, &action);
            traj.push(state.clone());
            if env.reached_goal(&state) {
                break;
            }
        }
        trajectories.push(traj);
    }
    Demonstration {
        env_id: env.id(),
        state_dim: env.state_dim(),
        seed,
        trajectories,
    }
}

/// Demonstrations from the environment's built-in expert.
pub fn expert_demonstrations(env: &EnvKind, n_trajectories: usize, seed: u64) -> Demonstration {
    collect_demonstrations(env, |s, rng| env.expert_action(s, rng), n_trajectories, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ActionTransform, GridWorld, PointMass};

    #[test]
    fn grid_expert_demo_follows_the_eleven_state_route() {
        let env = EnvKind::Grid(GridWorld::new(1));
        let demo = expert_demonstrations(&env, 2, 40);
        assert_eq!(demo.trajectories.len(), 2);
        for traj in &demo.trajectories {
            assert_eq!(traj.len(), 11, "route visits 11 states incl. endpoints");
            assert_eq!(traj[0], vec![0.0, 0.0]);
            assert_eq!(*traj.last().unwrap(), vec![5.0, 5.0]);
        }
        env.validate_demonstration(&demo).unwrap();
        assert_eq!(demo.n_pairs(), 20);
    }

    #[test]
    fn point_mass_expert_demo_is_feasible_and_reaches_goal() {
        let env = EnvKind::PointMass(PointMass::new(ActionTransform::Normal));
        let demo = expert_demonstrations(&env, 3, 7);
        env.validate_demonstration(&demo).unwrap();
        for traj in &demo.trajectories {
            let last = traj.last().unwrap();
            assert!(last[0] * last[0] + last[1] * last[1] <= 0.1 * 0.1 + 1e-12);
        }
    }

    #[test]
    fn demo_binary_round_trip_is_bit_exact() {
        let env = EnvKind::PointMass(PointMass::new(ActionTransform::ComplexDouble));
        let demo = expert_demonstrations(&env, 2, 123);
        let bytes = demo.to_bytes();
        let back = Demonstration::from_bytes(&bytes).unwrap();
        assert_eq!(back, demo);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupted_demo_bytes_are_rejected() {
        let env = EnvKind::Grid(GridWorld::new(1));
        let demo = expert_demonstrations(&env, 1, 9);
        let mut bytes = demo.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(Demonstration::from_bytes(&bytes).is_err());
    }

    #[test]
    fn teleporting_trajectory_fails_validation_with_location() {
        let env = EnvKind::Grid(GridWorld::new(1));
        let demo = Demonstration {
            env_id: env.id(),
            state_dim: 2,
            seed: 0,
            trajectories: vec![vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![4.0, 4.0]]],
        };
        match env.validate_demonstration(&demo) {
            Err(EnvError::InfeasibleTransition {
                trajectory: 0,
                step: 1,
            }) => {}
            other => panic!("expected infeasible transition at (0,1), got {other:?}"),
        }
    }
}
