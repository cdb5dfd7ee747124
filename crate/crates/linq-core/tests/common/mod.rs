//! Fixtures shared by the integration tests.
#![allow(dead_code)] // not every test file uses every fixture

use linq_core::mdp::{DiscountedMdp, FeatureMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two states, actions {stay = 0, go = 1}; reward 1 at state 1; `go` moves to
/// state 1. At gamma = 0.5 the optimal value is (1, 2).
pub fn two_state(gamma: f64) -> DiscountedMdp {
    let rewards = vec![0.0, 0.0, 1.0, 1.0];
    #[rustfmt::skip]
    let transitions = vec![
        1.0, 0.0,   0.0, 1.0,
        0.0, 1.0,   0.0, 1.0,
    ];
    DiscountedMdp::new(2, 2, rewards, transitions, gamma).unwrap()
}

/// One-hot features over all (s, a): K = S*A.
pub fn one_hot_features(mdp: &DiscountedMdp) -> FeatureMap {
    let pairs = mdp.n_pairs();
    let mut values = vec![0.0; pairs * pairs];
    for row in 0..pairs {
        values[row * pairs + row] = 1.0;
    }
    FeatureMap::new_stochastic(pairs, values).unwrap()
}

/// A random value vector with entries in `[lo, hi)`.
pub fn random_values(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// A random policy.
pub fn random_policy(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize) -> Vec<usize> {
    (0..n_states).map(|_| rng.gen_range(0..n_actions)).collect()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
