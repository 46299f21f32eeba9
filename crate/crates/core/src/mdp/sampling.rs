//! Seeded random MDP and policy generators used by verification suites and
//! property tests.  Simplex points are sampled by normalizing i.i.d.
//! exponentials, which is the uniform (flat Dirichlet) distribution.

use super::{FiniteMdp, TabularPolicy};
use rand::Rng;

/// Uniform point on the probability simplex of dimension `n`.
pub fn random_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            // −ln(1−u) is Exp(1); 1−u avoids ln(0).
            -(1.0 - u).ln()
        })
        .collect();
    let sum: f64 = v.iter().sum();
    for x in &mut v {
        *x /= sum;
    }
    v
}

/// Random dense MDP with uniform-simplex transition rows and initial
/// distribution; rewards (if requested) are i.i.d. uniform in [−1, 1].
pub fn random_mdp<R: Rng>(
    n_states: usize,
    n_actions: usize,
    discount: f64,
    with_reward: bool,
    rng: &mut R,
) -> FiniteMdp {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(random_simplex(n_states, rng));
    }
    let initial = random_simplex(n_states, rng);
    let reward = with_reward.then(|| {
        (0..n_states * n_states)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect()
    });
    FiniteMdp::new(n_states, n_actions, transition, initial, discount, reward)
        .expect("generated MDP is valid by construction")
}

/// Random policy with uniform-simplex rows.
pub fn random_policy<R: Rng>(n_states: usize, n_actions: usize, rng: &mut R) -> TabularPolicy {
    let mut probs = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        probs.extend(random_simplex(n_actions, rng));
    }
    TabularPolicy::new(n_states, n_actions, probs).expect("generated policy is valid")
}
