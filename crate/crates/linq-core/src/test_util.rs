//! Small fixtures shared by the unit tests.

use crate::mdp::{DiscountedMdp, FeatureMap};

/// The two-state instance used throughout the tests: states {0, 1}, actions
/// {stay = 0, go = 1}; reward 1 at state 1 under both actions, 0 at state 0;
/// `go` moves to state 1, `stay` self-loops. At gamma = 0.5 the optimal value
/// is (1, 2).
pub fn two_state(gamma: f64) -> DiscountedMdp {
    let rewards = vec![0.0, 0.0, 1.0, 1.0];
    #[rustfmt::skip]
    let transitions = vec![
        // (0, stay) -> 0        (0, go) -> 1
        1.0, 0.0,                0.0, 1.0,
        // (1, stay) -> 1        (1, go) -> 1
        0.0, 1.0,                0.0, 1.0,
    ];
    DiscountedMdp::new(2, 2, rewards, transitions, gamma).unwrap()
}

/// Two states, every transition row uniform over {0, 1}.
pub fn uniform_two_state(gamma: f64) -> DiscountedMdp {
    let rewards = vec![0.0, 0.0, 1.0, 1.0];
    let transitions = vec![0.5; 8];
    DiscountedMdp::new(2, 2, rewards, transitions, gamma).unwrap()
}

/// One-hot features over all (s, a) pairs: K = S*A, full expressivity.
pub fn one_hot_features(mdp: &DiscountedMdp) -> FeatureMap {
    let pairs = mdp.n_pairs();
    let mut values = vec![0.0; pairs * pairs];
    for row in 0..pairs {
        values[row * pairs + row] = 1.0;
    }
    FeatureMap::new_stochastic(pairs, values).unwrap()
}
