//! Grid-world planner diagnostics.
//!
//! For every cell, classify the planner's argmax prediction: *legal* when the
//! predicted cell is in the one-step image of the current cell (any action,
//! including wall-blocked self-transitions), and additionally flag whether it
//! points onto the expert route. These are the quantities behind the three
//! qualitative planner pictures: supervised planners point off-path states
//! onto the route, an uncalibrated policy-gradient planner drifts to illegal
//! targets, and the full method stays legal everywhere.

use super::{DecoupledPolicy, DepoError};
use crate::envs::GridWorld;
use std::collections::HashSet;

/// Classification of one state's argmax planner prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionClass {
    /// Reachable in one step and on the expert route.
    LegalOnPath,
    /// Reachable in one step but not an expert-route cell.
    LegalOffPath,
    /// Not reachable in one step from the state.
    Illegal,
}

/// Per-state argmax predictions with legality/route classification and the
/// aggregate fractions the qualitative checks consume.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPlannerReport {
    /// Argmax predicted state index per state index.
    pub predictions: Vec<usize>,
    pub classes: Vec<PredictionClass>,
    /// Fraction of non-goal states with a legal prediction.
    pub legal_fraction_non_goal: f64,
    /// Fraction of all states with an illegal prediction.
    pub illegal_fraction: f64,
    /// Among states off the expert route, the fraction whose prediction lands
    /// on a route cell.
    pub off_path_to_path_fraction: f64,
}

/// Classifies every cell's argmax planner prediction against the one-step
/// reachability structure and the expert route.
pub fn grid_planner_report(
    policy: &DecoupledPolicy,
    grid: &GridWorld,
) -> Result<GridPlannerReport, DepoError> {
    if !policy.is_tabular() {
        return Err(DepoError::ModeMismatch {
            context: "grid_planner_report",
            expected: "tabular",
        });
    }
    let path: HashSet<usize> = grid.expert_path().iter().map(|&c| grid.index_of(c)).collect();
    let goal = grid.index_of(grid.goal);
    let n = grid.n_states();

    let mut predictions = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    let mut legal_non_goal = 0usize;
    let mut non_goal = 0usize;
    let mut illegal = 0usize;
    let mut off_path = 0usize;
    let mut off_path_to_path = 0usize;

    for s in 0..n {
        let cell = grid.cell_of(s);
        let probs = policy.planner_probs(s);
        let pred = super::policy::argmax(&probs);
        let image: HashSet<usize> = (0..grid.n_actions())
            .map(|a| grid.index_of(grid.step_cell(cell, a)))
            .collect();
        let legal = image.contains(&pred);
        let class = if !legal {
            PredictionClass::Illegal
        } else if path.contains(&pred) {
            PredictionClass::LegalOnPath
        } else {
            PredictionClass::LegalOffPath
        };
        predictions.push(pred);
        classes.push(class);

        if !legal {
            illegal += 1;
        }
        if s != goal {
            non_goal += 1;
            if legal {
                legal_non_goal += 1;
            }
        }
        if !path.contains(&s) {
            off_path += 1;
            if path.contains(&pred) {
                off_path_to_path += 1;
            }
        }
    }

    Ok(GridPlannerReport {
        predictions,
        classes,
        legal_fraction_non_goal: legal_non_goal as f64 / non_goal.max(1) as f64,
        illegal_fraction: illegal as f64 / n as f64,
        off_path_to_path_fraction: off_path_to_path as f64 / off_path.max(1) as f64,
    })
}
