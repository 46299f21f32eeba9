//! Tests for action-redundancy witnesses, the observationally equivalent
//! policy pair they induce, and value invariance under within-group action
//! redistribution.
//!
//! Oracles: hand-constructed mixtures checked by direct arithmetic, exact
//! occupancy solves compared entrywise, and exact policy evaluation.

use depo_core::mdp::{
    counterexample_policies, evaluate_policy_values, find_redundancy_witness,
    nonnegative_least_squares, occupancy_measures, redistribution_value_report,
    redundancy_witness_at, same_next_state_action_set, sampling, state_action_occupancy_gap,
    FiniteMdp, MdpError, TabularPolicy,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Two states, two actions with *identical* rows at both states.
fn duplicate_action_mdp() -> FiniteMdp {
    FiniteMdp::new(
        2,
        2,
        vec![
            0.3, 0.7, // s0, a0
            0.3, 0.7, // s0, a1
            1.0, 0.0, // s1, a0
            1.0, 0.0, // s1, a1
        ],
        vec![1.0, 0.0],
        0.9,
        None,
    )
    .unwrap()
}

#[test]
fn nnls_reproduces_known_nonnegative_solution() {
    // A x = b with x* = (2, 0, 1) ≥ 0 exactly representable; oracle by
    // construction: b = 2·col0 + 1·col2.
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 2.0]);
    let x_true = DVector::from_column_slice(&[2.0, 0.0, 1.0]);
    let b = &a * &x_true;
    let (x, resid) = nonnegative_least_squares(&a, &b);
    assert!(resid < 1e-10, "residual {resid}");
    for i in 0..3 {
        assert!((x[i] - x_true[i]).abs() < 1e-8, "x[{i}] = {}", x[i]);
    }
}

#[test]
fn nnls_clamps_to_boundary_when_unconstrained_solution_is_negative() {
    // min ‖x·1 − b‖ over x ≥ 0 with b = −1: optimum is x = 0, residual 1.
    let a = DMatrix::from_row_slice(1, 1, &[1.0]);
    let b = DVector::from_column_slice(&[-1.0]);
    let (x, resid) = nonnegative_least_squares(&a, &b);
    assert_eq!(x[0], 0.0);
    assert!((resid - 1.0).abs() < 1e-12);
}

#[test]
fn duplicate_actions_yield_point_mass_witness() {
    let mdp = duplicate_action_mdp();
    let w = redundancy_witness_at(&mdp, 0, 0).expect("duplicate rows must be witnessed");
    assert_eq!(w.state, 0);
    assert_eq!(w.action, 0);
    assert!((w.mixture[1] - 1.0).abs() < 1e-9, "mixture {:?}", w.mixture);
    assert_eq!(w.mixture[0], 0.0);
    w.validate(&mdp).unwrap();
}

#[test]
fn interior_mixture_row_is_witnessed() {
    // a1's row is the midpoint of a0's and a2's rows: witness (0.5, 0, 0.5).
    let mdp = FiniteMdp::new(
        2,
        3,
        vec![
            1.0, 0.0, // s0, a0
            0.5, 0.5, // s0, a1
            0.0, 1.0, // s0, a2
            1.0, 0.0, // s1, a0
            0.0, 1.0, // s1, a1
            0.5, 0.5, // s1, a2
        ],
        vec![0.5, 0.5],
        0.8,
        None,
    )
    .unwrap();
    let w = redundancy_witness_at(&mdp, 0, 1).expect("midpoint row must be witnessed");
    assert!((w.mixture[0] - 0.5).abs() < 1e-9);
    assert!((w.mixture[2] - 0.5).abs() < 1e-9);
    w.validate(&mdp).unwrap();
}

#[test]
fn independent_rows_admit_no_witness() {
    // At every state the two rows are the opposite corners of the simplex; no
    // convex combination of one reproduces the other.
    let mdp = FiniteMdp::new(
        2,
        2,
        vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
        vec![0.5, 0.5],
        0.9,
        None,
    )
    .unwrap();
    assert!(find_redundancy_witness(&mdp).is_none());
}

#[test]
fn tampered_witness_is_rejected_with_residual() {
    let mdp = duplicate_action_mdp();
    let mut w = redundancy_witness_at(&mdp, 0, 0).unwrap();
    w.state = 1; // still duplicate rows at s1, so instead corrupt the mixture
    w.mixture = vec![0.5, 0.5];
    // Mixture must exclude the witnessed action entirely.
    assert!(matches!(
        w.validate(&mdp),
        Err(MdpError::InvalidWitness { .. })
    ));
}

#[test]
fn counterexample_policies_share_occupancies_but_differ_in_action_space() {
    // The decisive separation: the point-mass policy and the mixture policy
    // have exactly equal state and state-transition occupancies, yet their
    // state-action occupancies differ by the full occupancy of the state.
    let mdp = duplicate_action_mdp();
    let w = find_redundancy_witness(&mdp).unwrap();
    let base = TabularPolicy::uniform(2, 2);
    let (pi0, pi1) = counterexample_policies(&mdp, &w, &base).unwrap();

    let om0 = occupancy_measures(&mdp, &pi0).unwrap();
    let om1 = occupancy_measures(&mdp, &pi1).unwrap();
    for (a, b) in om0.state_vec().iter().zip(om1.state_vec()) {
        assert!((a - b).abs() < 1e-9);
    }
    for (a, b) in om0.transition_vec().iter().zip(om1.transition_vec()) {
        assert!((a - b).abs() < 1e-9);
    }
    let gap = state_action_occupancy_gap(&mdp, &pi0, &pi1).unwrap();
    // ρ(s0) ≥ 1 because all initial mass starts at the witness state, and the
    // two policies put that action mass on disjoint actions.
    assert!(gap >= 0.5, "state-action occupancy gap {gap} too small");
}

/// Three states; at s0 actions {0,1} both reach s1 while action 2 reaches s2.
/// All rows deterministic, state-transition reward attached.
fn grouped_mdp() -> FiniteMdp {
    let n = 3;
    let na = 3;
    let mut t = vec![0.0; n * na * n];
    let mut set = |s: usize, a: usize, s2: usize, t: &mut Vec<f64>| {
        t[(s * na + a) * n + s2] = 1.0;
    };
    set(0, 0, 1, &mut t);
    set(0, 1, 1, &mut t);
    set(0, 2, 2, &mut t);
    for a in 0..na {
        set(1, a, 1, &mut t);
        set(2, a, 2, &mut t);
    }
    let mut reward = vec![0.0; n * n];
    reward[1] = 1.0; // r(s0 → s1)
    reward[2] = -0.5; // r(s0 → s2)
    reward[1 * n + 1] = 0.25; // r(s1 → s1)
    FiniteMdp::new(n, na, t, vec![1.0, 0.0, 0.0], 0.9, Some(reward)).unwrap()
}

#[test]
fn same_successor_groups_partition_actions() {
    let mdp = grouped_mdp();
    let groups = same_next_state_action_set(&mdp, 0).unwrap();
    assert_eq!(groups, vec![vec![0, 1], vec![2]]);
    // Non-deterministic rows are rejected.
    let noisy = FiniteMdp::new(1, 1, vec![1.0], vec![1.0], 0.9, None).unwrap();
    assert!(same_next_state_action_set(&noisy, 0).is_ok());
    let stochastic =
        FiniteMdp::new(2, 1, vec![0.5, 0.5, 0.0, 1.0], vec![1.0, 0.0], 0.9, None).unwrap();
    assert!(matches!(
        same_next_state_action_set(&stochastic, 0),
        Err(MdpError::NonDeterministicRow { state: 0, action: 0 })
    ));
}

#[test]
fn within_group_redistribution_leaves_values_unchanged() {
    let mdp = grouped_mdp();
    // Support {0, 1} at s0 (inside the group reaching s1).
    let pi = TabularPolicy::new(
        3,
        3,
        vec![
            0.7, 0.3, 0.0, //
            1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, //
            1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0,
        ],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let mix = sampling::random_simplex(2, &mut rng);
        let replacement = vec![mix[0], mix[1], 0.0];
        let report = redistribution_value_report(&mdp, &pi, 0, &replacement).unwrap();
        assert_eq!(report.group, vec![0, 1]);
        assert!(
            report.max_value_diff < 1e-9,
            "value moved by {}",
            report.max_value_diff
        );
    }
}

#[test]
fn redistribution_preconditions_are_enforced() {
    let mdp = grouped_mdp();
    // Support spanning both groups at s0.
    let spanning = TabularPolicy::new(
        3,
        3,
        vec![
            0.5, 0.0, 0.5, //
            1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0,
        ],
    )
    .unwrap();
    assert!(matches!(
        redistribution_value_report(&mdp, &spanning, 0, &[1.0, 0.0, 0.0]),
        Err(MdpError::SupportSpansGroups { state: 0 })
    ));

    // Replacement leaking outside the group.
    let pi = TabularPolicy::new(
        3,
        3,
        vec![
            1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0,
        ],
    )
    .unwrap();
    assert!(matches!(
        redistribution_value_report(&mdp, &pi, 0, &[0.5, 0.0, 0.5]),
        Err(MdpError::ReplacementOutsideGroup { action: 2 })
    ));

    // Missing reward.
    let bare = FiniteMdp::new(1, 1, vec![1.0], vec![1.0], 0.9, None).unwrap();
    let pi1 = TabularPolicy::uniform(1, 1);
    assert!(matches!(
        redistribution_value_report(&bare, &pi1, 0, &[1.0]),
        Err(MdpError::MissingReward)
    ));
}

#[test]
fn cross_group_redistribution_does_change_values() {
    // Moving mass *across* groups (to the s2-reaching action) changes values;
    // this guards against the invariance check passing vacuously.
    let mdp = grouped_mdp();
    let pi = TabularPolicy::new(
        3,
        3,
        vec![
            1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0,
        ],
    )
    .unwrap();
    let other = pi.with_row(0, &[0.0, 0.0, 1.0]).unwrap();
    let v0 = evaluate_policy_values(&mdp, &pi).unwrap();
    let v1 = evaluate_policy_values(&mdp, &other).unwrap();
    let diff = v0
        .iter()
        .zip(&v1)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff > 0.5, "cross-group move should change values, diff {diff}");
}

#[test]
fn policy_evaluation_matches_closed_form_on_a_loop() {
    // Single self-loop with reward 1 every step: V = 1/(1−γ).
    let mdp = FiniteMdp::new(1, 1, vec![1.0], vec![1.0], 0.9, Some(vec![1.0])).unwrap();
    let v = evaluate_policy_values(&mdp, &TabularPolicy::uniform(1, 1)).unwrap();
    assert!((v[0] - 10.0).abs() < 1e-9);
}
