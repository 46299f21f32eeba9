//! Per-state compounding-error bound check.
//!
//! In a deterministic environment, the one-step gap between where the expert
//! would go and where the decoupled policy actually lands decomposes into a
//! planner error routed through the dynamics and inverse dynamics, and a pure
//! inverse-dynamics error:
//!
//! ```text
//! ‖s' − s'_E‖  ≤  L·C·‖h_ref(s) − h_ψ(s)‖  +  L·‖I_ref(s,ŝ') − I_φ(s,ŝ')‖
//! ```
//!
//! where `L` is a Lipschitz constant of the dynamics in the action and `C`
//! one of the reference inverse dynamics in the target state, `ŝ' = h_ψ(s)`
//! is the deterministic planner prediction, and `s'` the state reached by the
//! deterministic composed action. Both environments here are deterministic by
//! construction, so the check applies everywhere.
//!
//! Constants are *measured*: exhaustively on the grid (discrete metric on
//! states and actions), and by maximum difference quotients over `10^4`
//! sampled perturbation pairs on the point-mass. The point-mass pair set
//! includes per-coordinate axis pairs at the action-box corners (which pin
//! the per-axis slopes, exactly for linear transforms) and the pairs realized
//! by the evaluated policy itself, so the reported constants genuinely
//! dominate every quotient the evaluation exercises. Sampled point-mass
//! constants are inflated by a relative `1e-6` margin to cover the residual
//! secant-versus-derivative slack of difference quotients on curved
//! transforms.

use super::{DecoupledPolicy, DepoError};
use crate::envs::{EnvKind, GridWorld, PointMass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Additive tolerance for the per-state inequality.
pub const BOUND_TOL: f64 = 1e-9;

/// Number of random perturbation pairs per measured constant.
const N_QUOTIENT_PAIRS: usize = 10_000;

/// Relative inflation of sampled (point-mass) constants; see module docs.
const QUOTIENT_SLACK: f64 = 1e-6;

/// Who provides the reference inverse dynamics `I_ref`.
#[derive(Debug, Clone, Copy)]
pub enum ReferenceInverse<'a> {
    /// The environment's own exact inverse: lowest-index reaching action on
    /// the grid, velocity-matching action on the point-mass.
    Environment,
    /// A frozen policy's deterministic inverse dynamics. With an inaccurate
    /// reference the second bound term no longer anchors to the dynamics and
    /// the inequality may fail — that failure is diagnostic, not a bug.
    Policy(&'a DecoupledPolicy),
}

/// One evaluated state with the three bound quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSample {
    pub state: Vec<f64>,
    pub observed_gap: f64,
    pub planner_term: f64,
    pub invdyn_term: f64,
}

impl BoundSample {
    pub fn holds(&self, tol: f64) -> bool {
        self.observed_gap <= self.planner_term + self.invdyn_term + tol
    }
}

/// The full report: measured constants, per-state samples, violation count.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBoundReport {
    pub lipschitz_l: f64,
    pub lipschitz_c: f64,
    pub samples: Vec<BoundSample>,
    /// Violations at [`BOUND_TOL`].
    pub n_violations: usize,
    /// Largest `observed_gap − (planner_term + invdyn_term)`; negative when
    /// the bound holds everywhere with slack.
    pub max_violation: f64,
}

impl ErrorBoundReport {
    pub fn all_hold(&self) -> bool {
        self.n_violations == 0
    }

    pub fn max_observed_gap(&self) -> f64 {
        self.samples
            .iter()
            .fold(0.0, |m, s| m.max(s.observed_gap))
    }
}

/// Evaluates the one-step bound at `n_samples` states (all cells on the grid
/// when `n_samples ≥ 36`; random position/velocity draws on the point-mass)
/// using deterministic policy evaluation throughout.
pub fn one_step_error_bound_report(
    policy: &DecoupledPolicy,
    env: &EnvKind,
    reference: &ReferenceInverse,
    n_samples: usize,
    seed: u64,
) -> Result<ErrorBoundReport, DepoError> {
    match env {
        EnvKind::Grid(grid) => grid_report(policy, grid, reference, n_samples),
        EnvKind::PointMass(pm) => point_mass_report(policy, pm, reference, n_samples, seed),
    }
}

// ---------------------------------------------------------------- grid mode

/// Discrete metric: 0 when equal, 1 otherwise.
fn disc<T: PartialEq>(a: &T, b: &T) -> f64 {
    if a == b {
        0.0
    } else {
        1.0
    }
}

fn grid_reference_action(
    policy: &DecoupledPolicy,
    grid: &GridWorld,
    reference: &ReferenceInverse,
    cell: (usize, usize),
    target: (usize, usize),
) -> usize {
    match reference {
        // Outside the reachable set there is no ground-truth action; adopting
        // the learner's own choice zeroes that term and leaves the planner
        // term (which is then ≥ L·C ≥ the largest possible gap) to carry the
        // bound.
        ReferenceInverse::Environment => grid.reaching_action(cell, target).unwrap_or_else(|| {
            policy
                .invdyn_deterministic(&grid.state_vec(cell), &grid.state_vec(target))
                .as_discrete()
        }),
        ReferenceInverse::Policy(p) => p
            .invdyn_deterministic(&grid.state_vec(cell), &grid.state_vec(target))
            .as_discrete(),
    }
}

fn grid_report(
    policy: &DecoupledPolicy,
    grid: &GridWorld,
    reference: &ReferenceInverse,
    n_samples: usize,
) -> Result<ErrorBoundReport, DepoError> {
    if !policy.is_tabular() {
        return Err(DepoError::ModeMismatch {
            context: "one_step_error_bound_report on the grid",
            expected: "tabular",
        });
    }
    // L: exhaustive over states and action pairs, discrete metric.
    let mut l = 0.0f64;
    for s in 0..grid.n_states() {
        let c = grid.cell_of(s);
        for a1 in 0..grid.n_actions() {
            for a2 in (a1 + 1)..grid.n_actions() {
                l = l.max(disc(&grid.step_cell(c, a1), &grid.step_cell(c, a2)));
            }
        }
    }
    // C: exhaustive over states and target pairs.
    let mut cc = 0.0f64;
    for s in 0..grid.n_states() {
        let cell = grid.cell_of(s);
        for x in 0..grid.n_states() {
            for y in (x + 1)..grid.n_states() {
                let ax = grid_reference_action(policy, grid, reference, cell, grid.cell_of(x));
                let ay = grid_reference_action(policy, grid, reference, cell, grid.cell_of(y));
                cc = cc.max(disc(&ax, &ay));
            }
        }
    }

    let states: Vec<usize> = (0..grid.n_states()).take(n_samples.max(1)).collect();
    let mut samples = Vec::with_capacity(states.len());
    for s in states {
        let cell = grid.cell_of(s);
        let sv = grid.state_vec(cell);
        let expert_next = grid.step_cell(cell, grid.expert_direction(cell) as usize);
        let planned = policy.plan_deterministic(&sv);
        let planned_cell = grid.cell_of_state(&planned);
        let a_policy = policy.invdyn_deterministic(&sv, &planned).as_discrete();
        let reached = grid.step_cell(cell, a_policy);
        let a_ref = grid_reference_action(policy, grid, reference, cell, planned_cell);
        samples.push(BoundSample {
            state: sv,
            observed_gap: disc(&reached, &expert_next),
            planner_term: l * cc * disc(&planned_cell, &expert_next),
            invdyn_term: l * disc(&a_policy, &a_ref),
        });
    }
    Ok(finish_report(l, cc, samples))
}

// ---------------------------------------------------------- point-mass mode

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn pm_reference_action(
    pm: &PointMass,
    reference: &ReferenceInverse,
    state: &[f64],
    target: &[f64],
) -> Vec<f64> {
    match reference {
        ReferenceInverse::Environment => pm.matching_action(state, target),
        ReferenceInverse::Policy(p) => p
            .invdyn_deterministic(state, target)
            .as_continuous()
            .to_vec(),
    }
}

fn random_pm_state<R: Rng>(pm: &PointMass, rng: &mut R) -> Vec<f64> {
    let b = pm.start_box;
    vec![
        rng.random_range(-b..b),
        rng.random_range(-b..b),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ]
}

fn point_mass_report(
    policy: &DecoupledPolicy,
    pm: &PointMass,
    reference: &ReferenceInverse,
    n_samples: usize,
    seed: u64,
) -> Result<ErrorBoundReport, DepoError> {
    if policy.is_tabular() {
        return Err(DepoError::ModeMismatch {
            context: "one_step_error_bound_report on the point-mass",
            expected: "continuous",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw_dim = pm.raw_action_dim();

    // Evaluation pass first, collecting the realized action and target pairs
    // so the constant estimators can include every quotient the evaluation
    // actually exercises.
    struct Eval {
        state: Vec<f64>,
        expert_next: Vec<f64>,
        planned: Vec<f64>,
        a_policy: Vec<f64>,
        a_ref: Vec<f64>,
        reached: Vec<f64>,
    }
    let mut evals = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let state = random_pm_state(pm, &mut rng);
        let expert_next = pm.step(&state, &pm.expert_action(&state));
        let planned = policy.plan_deterministic(&state);
        let a_policy = policy
            .invdyn_deterministic(&state, &planned)
            .as_continuous()
            .to_vec();
        let a_ref = pm_reference_action(pm, reference, &state, &planned);
        let reached = pm.step(&state, &a_policy);
        evals.push(Eval {
            state,
            expert_next,
            planned,
            a_policy,
            a_ref,
            reached,
        });
    }

    // L = sup ‖T(s,a1) − T(s,a2)‖ / ‖a1 − a2‖.
    let mut l = 0.0f64;
    let quot_l = |state: &[f64], a1: &[f64], a2: &[f64], l: &mut f64| {
        let da = euclid(a1, a2);
        if da > 1e-12 {
            let r = euclid(&pm.step(state, a1), &pm.step(state, a2)) / da;
            *l = l.max(r);
        }
    };
    for _ in 0..N_QUOTIENT_PAIRS {
        let s = random_pm_state(pm, &mut rng);
        let a1: Vec<f64> = (0..raw_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a2: Vec<f64> = (0..raw_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        quot_l(&s, &a1, &a2, &mut l);
    }
    // Axis pairs at box corners pin per-coordinate slopes of the transform.
    for corner_sign in [-1.0, 1.0] {
        for d in 0..raw_dim {
            for delta in [1e-2, 1e-3, 1e-6] {
                let s = random_pm_state(pm, &mut rng);
                let base: Vec<f64> = vec![corner_sign; raw_dim];
                let mut shifted = base.clone();
                shifted[d] = corner_sign - corner_sign * delta;
                quot_l(&s, &base, &shifted, &mut l);
            }
        }
    }
    // Realized action pairs from the evaluation pass.
    for e in &evals {
        quot_l(&e.state, &e.a_policy, &e.a_ref, &mut l);
    }
    l *= 1.0 + QUOTIENT_SLACK;

    // C = sup ‖I_ref(s,x) − I_ref(s,y)‖ / ‖x − y‖.
    let mut c = 0.0f64;
    let quot_c = |state: &[f64], x: &[f64], y: &[f64], c: &mut f64| {
        let dx = euclid(x, y);
        if dx > 1e-12 {
            let ax = pm_reference_action(pm, reference, state, x);
            let ay = pm_reference_action(pm, reference, state, y);
            *c = c.max(euclid(&ax, &ay) / dx);
        }
    };
    for _ in 0..N_QUOTIENT_PAIRS {
        let s = random_pm_state(pm, &mut rng);
        let around: Vec<f64> = {
            let a: Vec<f64> = (0..raw_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            pm.step(&s, &a)
        };
        let x: Vec<f64> = around
            .iter()
            .map(|&v| v + rng.random_range(-0.05..0.05))
            .collect();
        if rng.random::<bool>() {
            // Velocity-axis pair: the slope-carrying directions.
            let mut y = x.clone();
            let d = 2 + rng.random_range(0..2);
            y[d] += [1e-3, 1e-6][rng.random_range(0..2)];
            quot_c(&s, &x, &y, &mut c);
        } else {
            let y: Vec<f64> = x
                .iter()
                .map(|&v| v + rng.random_range(-0.05..0.05))
                .collect();
            quot_c(&s, &x, &y, &mut c);
        }
    }
    // Realized target pairs from the evaluation pass.
    for e in &evals {
        quot_c(&e.state, &e.planned, &e.expert_next, &mut c);
    }
    c *= 1.0 + QUOTIENT_SLACK;

    let samples = evals
        .into_iter()
        .map(|e| BoundSample {
            observed_gap: euclid(&e.reached, &e.expert_next),
            planner_term: l * c * euclid(&e.planned, &e.expert_next),
            invdyn_term: l * euclid(&e.a_policy, &e.a_ref),
            state: e.state,
        })
        .collect();
    Ok(finish_report(l, c, samples))
}

fn finish_report(l: f64, c: f64, samples: Vec<BoundSample>) -> ErrorBoundReport {
    let mut n_violations = 0;
    let mut max_violation = f64::NEG_INFINITY;
    for s in &samples {
        let excess = s.observed_gap - (s.planner_term + s.invdyn_term);
        max_violation = max_violation.max(excess);
        if !s.holds(BOUND_TOL) {
            n_violations += 1;
        }
    }
    ErrorBoundReport {
        lipschitz_l: l,
        lipschitz_c: c,
        samples,
        n_violations,
        max_violation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depo::LOGITS_SLICE;
    use crate::envs::ActionTransform;
    use rand::SeedableRng;

    /// Tabular policy with the exact expert planner and exact inverse dynamics.
    fn perfect_grid_policy(grid: &GridWorld) -> DecoupledPolicy {
        let mut policy = DecoupledPolicy::tabular(6, grid.n_actions());
        if let DecoupledPolicy::Tabular(t) = &mut policy {
            let (n_states, n_actions) = (t.n_states, t.n_actions);
            for s in 0..n_states {
                let cell = grid.cell_of(s);
                let next = grid.step_cell(cell, grid.expert_direction(cell) as usize);
                t.planner.slice_mut(LOGITS_SLICE).unwrap()
                    [s * n_states + grid.index_of(next)] = 40.0;
            }
            let logits = t.invdyn.slice_mut(LOGITS_SLICE).unwrap();
            for s in 0..n_states {
                for sigma in 0..n_states {
                    if let Some(a) = grid.reaching_action(grid.cell_of(s), grid.cell_of(sigma)) {
                        logits[(s * n_states + sigma) * n_actions + a] = 40.0;
                    }
                }
            }
        }
        policy
    }

    #[test]
    fn perfect_grid_policy_has_zero_gap_and_zero_terms() {
        let grid = GridWorld::new(1);
        let policy = perfect_grid_policy(&grid);
        let report = one_step_error_bound_report(
            &policy,
            &EnvKind::Grid(grid),
            &ReferenceInverse::Environment,
            36,
            0,
        )
        .unwrap();
        assert!(report.all_hold());
        for s in &report.samples {
            assert_eq!(s.observed_gap, 0.0);
            assert_eq!(s.planner_term, 0.0);
            assert_eq!(s.invdyn_term, 0.0);
        }
        assert_eq!(report.lipschitz_l, 1.0);
        assert_eq!(report.lipschitz_c, 1.0);
    }

    #[test]
    fn uniform_grid_policy_still_satisfies_the_bound_everywhere() {
        let grid = GridWorld::new(2);
        let policy = DecoupledPolicy::tabular(6, grid.n_actions());
        let report = one_step_error_bound_report(
            &policy,
            &EnvKind::Grid(grid),
            &ReferenceInverse::Environment,
            36,
            0,
        )
        .unwrap();
        assert!(report.all_hold(), "violations: {}", report.n_violations);
        assert_eq!(report.samples.len(), 36);
    }

    #[test]
    fn random_continuous_policy_satisfies_the_bound_on_normal_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let policy = DecoupledPolicy::continuous(4, 2, &[16], &[16], &mut rng);
        let pm = PointMass::new(ActionTransform::Normal);
        let report = one_step_error_bound_report(
            &policy,
            &EnvKind::PointMass(pm.clone()),
            &ReferenceInverse::Environment,
            200,
            7,
        )
        .unwrap();
        assert!(
            report.all_hold(),
            "violations {} max excess {:.3e}",
            report.n_violations,
            report.max_violation
        );
        // Normal transform: exact constants are L = dt and C = 1/dt.
        assert!((report.lipschitz_l - pm.dt).abs() < 1e-3 * pm.dt);
        assert!((report.lipschitz_c - 1.0 / pm.dt).abs() < 1e-3 / pm.dt);
    }

    #[test]
    fn inverted_dynamics_also_satisfy_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let policy = DecoupledPolicy::continuous(4, 2, &[16], &[16], &mut rng);
        let pm = PointMass::new(ActionTransform::Inverted);
        let report = one_step_error_bound_report(
            &policy,
            &EnvKind::PointMass(pm),
            &ReferenceInverse::Environment,
            200,
            8,
        )
        .unwrap();
        assert!(report.all_hold(), "max excess {:.3e}", report.max_violation);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let cont = DecoupledPolicy::continuous(4, 2, &[8], &[8], &mut rng);
        let err = one_step_error_bound_report(
            &cont,
            &EnvKind::Grid(GridWorld::new(1)),
            &ReferenceInverse::Environment,
            10,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, DepoError::ModeMismatch { .. }));
    }
}
