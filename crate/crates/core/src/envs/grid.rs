//! 6×6 grid world with configurable action redundancy.
//!
//! Cells are `(x, y)` with the origin at the bottom-left and the goal at the
//! top-right `(5, 5)`.  The action set has `4k` members: action `j` moves in
//! direction `j mod 4` (up, right, down, left), so each direction is served by
//! `k` interchangeable actions — deliberate, exact action redundancy.  Moves
//! off the grid leave the cell unchanged.  A 2×2 shaded zone in the goal
//! corner is excluded from start-state sampling.  The state-transition reward
//! is 1 exactly when the successor is the goal.

use crate::mdp::{FiniteMdp, TabularPolicy};
use rand::Rng;

/// Grid side length.
pub const GRID_SIDE: usize = 6;
/// Number of cells.
pub const GRID_CELLS: usize = GRID_SIDE * GRID_SIDE;

/// Movement direction, ordered to match `action mod 4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Right,
    Down,
    Left,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Right,
        Direction::Down,
        Direction::Left,
    ];

    pub fn of_action(action: usize) -> Direction {
        Self::ALL[action % 4]
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (0, 1),
            Direction::Right => (1, 0),
            Direction::Down => (0, -1),
            Direction::Left => (-1, 0),
        }
    }
}

/// 6×6 grid world with `k`-fold action redundancy.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    /// Redundancy factor: `4k` actions, `k` per direction.
    pub k: usize,
    /// Cells excluded from start sampling (goal corner zone).
    pub shaded: Vec<(usize, usize)>,
    pub goal: (usize, usize),
    /// Episode length cap.
    pub horizon: usize,
}

impl GridWorld {
    /// Standard instance: goal `(5,5)`, shaded 2×2 corner, horizon 60.
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "redundancy factor must be at least 1");
        GridWorld {
            k,
            shaded: vec![(4, 4), (5, 4), (4, 5), (5, 5)],
            goal: (5, 5),
            horizon: 60,
        }
    }

    pub fn n_states(&self) -> usize {
        GRID_CELLS
    }

    pub fn n_actions(&self) -> usize {
        4 * self.k
    }

    /// Dense state index of a cell.
    pub fn index_of(&self, cell: (usize, usize)) -> usize {
        debug_assert!(cell.0 < GRID_SIDE && cell.1 < GRID_SIDE);
        cell.1 * GRID_SIDE + cell.0
    }

    /// Cell of a dense state index.
    pub fn cell_of(&self, index: usize) -> (usize, usize) {
        debug_assert!(index < GRID_CELLS);
        (index % GRID_SIDE, index / GRID_SIDE)
    }

    pub fn is_shaded(&self, cell: (usize, usize)) -> bool {
        self.shaded.contains(&cell)
    }

    /// Deterministic single-step dynamics; off-grid moves keep the cell.
    pub fn step_cell(&self, cell: (usize, usize), action: usize) -> (usize, usize) {
        assert!(action < self.n_actions(), "action {action} out of range");
        let (dx, dy) = Direction::of_action(action).delta();
        let nx = cell.0 as isize + dx;
        let ny = cell.1 as isize + dy;
        if nx < 0 || ny < 0 || nx >= GRID_SIDE as isize || ny >= GRID_SIDE as isize {
            cell
        } else {
            (nx as usize, ny as usize)
        }
    }

    /// The demonstrated route: along the bottom row to `(5,0)`, then up the
    /// right column to the goal.
    /// Lowest-index action that moves `cell` to `target` in one step, or
    /// `None` when no action does. This is the canonical exact inverse
    /// dynamics of the environment itself.
    pub fn reaching_action(&self, cell: (usize, usize), target: (usize, usize)) -> Option<usize> {
        (0..self.n_actions()).find(|&a| self.step_cell(cell, a) == target)
    }

    pub fn expert_path(&self) -> Vec<(usize, usize)> {
        let mut path = Vec::with_capacity(11);
        for x in 0..GRID_SIDE {
            path.push((x, 0));
        }
        for y in 1..GRID_SIDE {
            path.push((GRID_SIDE - 1, y));
        }
        path
    }

    /// Direction the expert takes from a cell: along the demonstrated route on
    /// path cells, and toward the route (right until the last column, then up)
    /// from everywhere else.  At the goal the expert pushes up, which leaves
    /// the cell unchanged.
    pub fn expert_direction(&self, cell: (usize, usize)) -> Direction {
        if cell.0 < GRID_SIDE - 1 && cell.1 == 0 {
            Direction::Right
        } else if cell.0 == GRID_SIDE - 1 {
            Direction::Up
        } else if cell.0 < GRID_SIDE - 1 {
            Direction::Right
        } else {
            Direction::Up
        }
    }

    /// Expert policy table: mass split uniformly over the `k` actions of the
    /// expert direction at every cell.
    pub fn expert_policy(&self) -> TabularPolicy {
        let na = self.n_actions();
        let mut probs = vec![0.0; GRID_CELLS * na];
        for idx in 0..GRID_CELLS {
            let dir = self.expert_direction(self.cell_of(idx)) as usize;
            for rep in 0..self.k {
                probs[idx * na + (dir + 4 * rep)] = 1.0 / self.k as f64;
            }
        }
        TabularPolicy::new(GRID_CELLS, na, probs).expect("expert policy rows are valid")
    }

    /// Uniform start over non-shaded cells.
    pub fn sample_start<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        loop {
            let x = rng.random_range(0..GRID_SIDE);
            let y = rng.random_range(0..GRID_SIDE);
            if !self.is_shaded((x, y)) {
                return (x, y);
            }
        }
    }

    /// Exact finite-MDP view: deterministic kernel, uniform non-shaded initial
    /// distribution, reward `r(s, s') = 1[s' = goal]`.
    pub fn to_finite_mdp(&self, discount: f64) -> FiniteMdp {
        let n = GRID_CELLS;
        let na = self.n_actions();
        let mut t = vec![0.0; n * na * n];
        for idx in 0..n {
            let cell = self.cell_of(idx);
            for a in 0..na {
                let nidx = self.index_of(self.step_cell(cell, a));
                t[(idx * na + a) * n + nidx] = 1.0;
            }
        }
        let open: Vec<usize> = (0..n)
            .filter(|&i| !self.is_shaded(self.cell_of(i)))
            .collect();
        let mut initial = vec![0.0; n];
        for &i in &open {
            initial[i] = 1.0 / open.len() as f64;
        }
        let goal_idx = self.index_of(self.goal);
        let mut reward = vec![0.0; n * n];
        for s in 0..n {
            reward[s * n + goal_idx] = 1.0;
        }
        FiniteMdp::new(n, na, t, initial, discount, Some(reward))
            .expect("grid MDP is valid by construction")
    }

    /// State vector `[x, y]` for a cell.
    pub fn state_vec(&self, cell: (usize, usize)) -> Vec<f64> {
        vec![cell.0 as f64, cell.1 as f64]
    }

    /// Cell of a state vector (entries must be integral grid coordinates).
    pub fn cell_of_state(&self, state: &[f64]) -> (usize, usize) {
        assert_eq!(state.len(), 2, "grid states are 2-dimensional");
        let x = state[0].round();
        let y = state[1].round();
        assert!(
            (0.0..GRID_SIDE as f64).contains(&x) && (0.0..GRID_SIDE as f64).contains(&y),
            "state {state:?} outside the grid"
        );
        (x as usize, y as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directions_cycle_mod_four() {
        let g = GridWorld::new(3);
        assert_eq!(g.n_actions(), 12);
        for a in 0..12 {
            assert_eq!(Direction::of_action(a), Direction::ALL[a % 4]);
        }
        // Actions equal mod 4 move identically from every cell.
        for idx in 0..GRID_CELLS {
            let cell = g.cell_of(idx);
            for a in 0..4 {
                let base = g.step_cell(cell, a);
                for rep in 1..3 {
                    assert_eq!(g.step_cell(cell, a + 4 * rep), base);
                }
            }
        }
    }

    #[test]
    fn off_grid_moves_keep_the_cell() {
        let g = GridWorld::new(1);
        assert_eq!(g.step_cell((0, 0), 3), (0, 0)); // left at west wall
        assert_eq!(g.step_cell((0, 0), 2), (0, 0)); // down at south wall
        assert_eq!(g.step_cell((5, 5), 0), (5, 5)); // up at north wall
        assert_eq!(g.step_cell((5, 5), 1), (5, 5)); // right at east wall
        assert_eq!(g.step_cell((2, 3), 1), (3, 3));
    }

    #[test]
    fn expert_path_runs_bottom_row_then_right_column() {
        let g = GridWorld::new(1);
        let path = g.expert_path();
        assert_eq!(path.len(), 11);
        assert_eq!(path[0], (0, 0));
        assert_eq!(path[5], (5, 0));
        assert_eq!(path[10], (5, 5));
        // Following the expert policy's direction steps along the path.
        for w in path.windows(2) {
            let dir = g.expert_direction(w[0]) as usize;
            assert_eq!(g.step_cell(w[0], dir), w[1]);
        }
    }

    #[test]
    fn expert_policy_splits_mass_across_redundant_actions() {
        let g = GridWorld::new(4);
        let pi = g.expert_policy();
        let idx = g.index_of((2, 0));
        // Direction right = 1; actions 1, 5, 9, 13 each carry 1/4.
        for rep in 0..4 {
            assert!((pi.prob(idx, 1 + 4 * rep) - 0.25).abs() < 1e-15);
        }
        assert_eq!(pi.prob(idx, 0), 0.0);
    }

    #[test]
    fn start_sampling_avoids_the_shaded_zone() {
        let g = GridWorld::new(1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        use rand::SeedableRng;
        for _ in 0..500 {
            let c = g.sample_start(&mut rng);
            assert!(!g.is_shaded(c), "sampled shaded cell {c:?}");
        }
    }

    #[test]
    fn finite_mdp_reward_marks_goal_entry() {
        let g = GridWorld::new(2);
        let m = g.to_finite_mdp(0.99);
        assert_eq!(m.n_states(), 36);
        assert_eq!(m.n_actions(), 8);
        let goal = g.index_of((5, 5));
        let pre = g.index_of((5, 4));
        assert_eq!(m.reward(pre, goal), Some(1.0));
        assert_eq!(m.reward(pre, pre), Some(0.0));
        // Deterministic: up (action 0) from (5,4) lands in the goal.
        assert_eq!(m.t(pre, 0, goal), 1.0);
        // Initial mass only on non-shaded cells.
        assert_eq!(m.initial()[goal], 0.0);
        let open_mass: f64 = m.initial().iter().sum();
        assert!((open_mass - 1.0).abs() < 1e-12);
        assert!((m.initial()[0] - 1.0 / 32.0).abs() < 1e-15);
    }
}
