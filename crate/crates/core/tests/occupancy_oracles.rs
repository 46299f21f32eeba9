//! Oracle tests for the exact occupancy-measure engine.
//!
//! Independent oracles used here, none of which share code with the linear
//! solver under test:
//! * closed-form geometric series on hand-built chain/cycle MDPs,
//! * Monte-Carlo rollout estimation with standard-error bands,
//! * truncated forward-recursion sums of `γᵗ·P(s_t = s, s_{t+1} = s')`.

use depo_core::mdp::{
    column_dominance_report, marginal_planner, occupancy_measures, planner_from_occupancy,
    sampling, state_occupancy, FiniteMdp, PlannerRow, TabularPolicy,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn deterministic_chain() -> (FiniteMdp, TabularPolicy) {
    // s0 → s1 → s1, single action, γ = 0.5, start in s0.
    let mdp = FiniteMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0], 0.5, None).unwrap();
    let pi = TabularPolicy::uniform(2, 1);
    (mdp, pi)
}

#[test]
fn chain_occupancy_matches_geometric_series() {
    // Geometric-series oracle: ρ(s0) = 1 (visited only at t = 0) and
    // ρ(s1) = Σ_{t≥1} γᵗ = γ/(1−γ) = 1 at γ = 0.5.  Frozen values: (1, 1).
    let (mdp, pi) = deterministic_chain();
    let rho = state_occupancy(&mdp, &pi).unwrap();
    assert!((rho[0] - 1.0).abs() < 1e-12, "ρ(s0) = {}", rho[0]);
    assert!((rho[1] - 1.0).abs() < 1e-12, "ρ(s1) = {}", rho[1]);
}

#[test]
fn cycle_occupancy_matches_geometric_series() {
    // Three-state deterministic cycle at γ = 0.9:
    // ρ(s_k) = γᵏ/(1−γ³), giving (3.690036…, 3.321033…, 2.988929…).
    let mdp = FiniteMdp::new(
        3,
        1,
        vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0],
        0.9,
        None,
    )
    .unwrap();
    let pi = TabularPolicy::uniform(3, 1);
    let rho = state_occupancy(&mdp, &pi).unwrap();
    let denom = 1.0 - 0.9f64.powi(3);
    for k in 0..3 {
        let expect = 0.9f64.powi(k as i32) / denom;
        assert!(
            (rho[k] - expect).abs() < 1e-12,
            "ρ(s{k}) = {} vs {}",
            rho[k],
            expect
        );
    }
}

#[test]
fn random_mdp_occupancy_matches_monte_carlo_rollouts() {
    // Monte-Carlo oracle: 200,000 truncated rollouts (horizon 500) of the
    // 5-state 3-action MDP drawn at seed 7 with γ = 0.9.  The truncation tail
    // γ^501/(1−γ) ≈ 1e-22 is negligible next to the standard error.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mdp = sampling::random_mdp(5, 3, 0.9, false, &mut rng);
    let pi = sampling::random_policy(5, 3, &mut rng);
    let exact = state_occupancy(&mdp, &pi).unwrap();

    const ROLLOUTS: usize = 200_000;
    const HORIZON: usize = 500;
    let mut sum = [0.0f64; 5];
    let mut sumsq = [0.0f64; 5];
    let mut roll_rng = ChaCha8Rng::seed_from_u64(1_000_007);
    for _ in 0..ROLLOUTS {
        let mut disc_count = [0.0f64; 5];
        let mut s = sample_index(mdp.initial(), &mut roll_rng);
        let mut gamma_t = 1.0;
        for _ in 0..HORIZON {
            disc_count[s] += gamma_t;
            let a = pi.sample(s, &mut roll_rng);
            s = sample_index(mdp.t_row(s, a), &mut roll_rng);
            gamma_t *= 0.9;
        }
        for k in 0..5 {
            sum[k] += disc_count[k];
            sumsq[k] += disc_count[k] * disc_count[k];
        }
    }
    for k in 0..5 {
        let mean = sum[k] / ROLLOUTS as f64;
        let var = (sumsq[k] / ROLLOUTS as f64 - mean * mean).max(0.0);
        let se = (var / ROLLOUTS as f64).sqrt();
        let gap = (exact[k] - mean).abs();
        assert!(
            gap <= 3.0 * se + 1e-12,
            "state {k}: exact {} vs MC {mean} (SE {se}, gap {gap})",
            exact[k]
        );
    }
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Truncated forward-recursion oracle for the transition occupancy:
/// Σ_{t≤T} γᵗ P(s_t = s, s_{t+1} = s') computed from the exact state
/// distribution sequence, with no linear solve involved.
fn truncated_transition_occupancy(
    mdp: &FiniteMdp,
    pi: &TabularPolicy,
    horizon: usize,
) -> Vec<f64> {
    let n = mdp.n_states();
    let p = depo_core::mdp::transition_matrix_under(mdp, pi);
    let mut dist: Vec<f64> = mdp.initial().to_vec();
    let mut joint = vec![0.0; n * n];
    let mut gamma_t = 1.0;
    for _ in 0..=horizon {
        for s in 0..n {
            if dist[s] == 0.0 {
                continue;
            }
            for s2 in 0..n {
                joint[s * n + s2] += gamma_t * dist[s] * p[s * n + s2];
            }
        }
        let mut next = vec![0.0; n];
        for s in 0..n {
            for s2 in 0..n {
                next[s2] += dist[s] * p[s * n + s2];
            }
        }
        dist = next;
        gamma_t *= mdp.discount();
    }
    joint
}

#[test]
fn transition_occupancy_matches_truncated_sum() {
    // 3-state 2-action MDP at seed 11, γ = 0.95, horizon 1000: the truncation
    // tail 0.95^1001/0.05 ≈ 1e-21 is far below the 1e-6 agreement bound.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mdp = sampling::random_mdp(3, 2, 0.95, false, &mut rng);
    let pi = sampling::random_policy(3, 2, &mut rng);
    let om = occupancy_measures(&mdp, &pi).unwrap();
    let truncated = truncated_transition_occupancy(&mdp, &pi, 1000);
    for (i, (&a, &b)) in om.transition_vec().iter().zip(&truncated).enumerate() {
        assert!((a - b).abs() < 1e-6, "entry {i}: solve {a} vs truncated {b}");
    }
}

#[test]
fn transition_occupancy_matches_truncated_sum_at_high_discount() {
    // At γ = 0.99 the horizon must grow for the tail to clear the bound:
    // 0.99^2501/0.01 ≈ 1.2e-9 < 1e-6, so horizon 2500 suffices.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mdp = sampling::random_mdp(3, 2, 0.99, false, &mut rng);
    let pi = sampling::random_policy(3, 2, &mut rng);
    let om = occupancy_measures(&mdp, &pi).unwrap();
    let truncated = truncated_transition_occupancy(&mdp, &pi, 2500);
    for (i, (&a, &b)) in om.transition_vec().iter().zip(&truncated).enumerate() {
        assert!((a - b).abs() < 1e-6, "entry {i}: solve {a} vs truncated {b}");
    }
}

#[test]
fn planner_recovered_from_occupancy_matches_action_marginal() {
    // The round trip π → occupancy → normalized planner rows must agree with
    // the direct action marginal Σ_a π(a|s)T(s'|s,a) wherever defined.
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..8);
        let na = rng.random_range(2..5);
        let mdp = sampling::random_mdp(n, na, 0.99, false, &mut rng);
        let pi = sampling::random_policy(n, na, &mut rng);
        let om = occupancy_measures(&mdp, &pi).unwrap();
        let recovered = planner_from_occupancy(&om);
        let direct = marginal_planner(&mdp, &pi).unwrap();
        let gap = recovered.max_abs_diff_on_defined(&direct);
        assert!(gap < 1e-9, "seed {seed}: planner mismatch {gap:.3e}");
        // Dense random MDPs visit every state, so no row may be undefined.
        for s in 0..n {
            assert!(
                matches!(recovered.row(s), PlannerRow::Distribution(_)),
                "seed {seed}: row {s} unexpectedly undefined"
            );
        }
    }
}

#[test]
fn unreachable_states_yield_undefined_planner_rows() {
    // Two disconnected self-loops; all initial mass on s0 ⇒ s1 never visited.
    let mdp = FiniteMdp::new(2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 0.0], 0.9, None).unwrap();
    let pi = TabularPolicy::uniform(2, 1);
    let om = occupancy_measures(&mdp, &pi).unwrap();
    let recovered = planner_from_occupancy(&om);
    assert!(matches!(recovered.row(0), PlannerRow::Distribution(_)));
    assert!(matches!(recovered.row(1), PlannerRow::Undefined));
    assert_eq!(recovered.prob(1, 0), None);
}

#[test]
fn dominance_margins_equal_one_minus_discount() {
    // Every column margin of the planner fixed-point system is exactly 1 − γ;
    // the report must find this numerically for arbitrary planners.
    for (seed, gamma) in [(0u64, 0.99), (1, 0.9), (2, 0.5)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = sampling::random_mdp(6, 3, gamma, false, &mut rng);
        let pi = sampling::random_policy(6, 3, &mut rng);
        let planner = marginal_planner(&mdp, &pi).unwrap();
        let report = column_dominance_report(&planner, gamma).unwrap();
        assert!(report.all_positive());
        assert!(
            (report.min_margin - (1.0 - gamma)).abs() < 1e-12,
            "min margin {} vs {}",
            report.min_margin,
            1.0 - gamma
        );
        assert!((report.max_margin - (1.0 - gamma)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn occupancy_invariants_hold_on_random_mdps(
        seed in any::<u64>(),
        n in 2usize..7,
        na in 1usize..4,
        gamma in 0.3f64..0.98,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = sampling::random_mdp(n, na, gamma, false, &mut rng);
        let pi = sampling::random_policy(n, na, &mut rng);
        let om = occupancy_measures(&mdp, &pi).unwrap();

        // Non-negativity up to solver roundoff.
        prop_assert!(om.most_negative_entry() > -1e-10);
        // Total mass 1/(1−γ).
        let mass = om.total_mass();
        prop_assert!((mass - 1.0 / (1.0 - gamma)).abs() < 1e-9 * (1.0 / (1.0 - gamma)));
        // Marginalization consistency and the flow equation.
        prop_assert!(om.max_consistency_residual() < 1e-9);
        prop_assert!(om.max_flow_residual(&mdp, &pi) < 1e-9);
    }

    #[test]
    fn truncated_sum_agrees_within_tolerance_for_moderate_discounts(
        seed in any::<u64>(),
        n in 2usize..6,
        na in 1usize..4,
        gamma in 0.3f64..0.95,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = sampling::random_mdp(n, na, gamma, false, &mut rng);
        let pi = sampling::random_policy(n, na, &mut rng);
        let om = occupancy_measures(&mdp, &pi).unwrap();
        let truncated = truncated_transition_occupancy(&mdp, &pi, 1000);
        for (a, b) in om.transition_vec().iter().zip(&truncated) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn dominance_margin_is_one_minus_discount_for_any_planner(
        seed in any::<u64>(),
        n in 2usize..7,
        gamma in 0.05f64..0.995,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = sampling::random_mdp(n, 2, gamma, false, &mut rng);
        let pi = sampling::random_policy(n, 2, &mut rng);
        let planner = marginal_planner(&mdp, &pi).unwrap();
        let report = column_dominance_report(&planner, gamma).unwrap();
        prop_assert!(report.all_positive());
        prop_assert!((report.min_margin - (1.0 - gamma)).abs() < 1e-12);
        prop_assert!((report.max_margin - (1.0 - gamma)).abs() < 1e-12);
    }
}
