//! Bellman operators on value vectors.

use crate::error::{CoreError, Result};
use crate::mdp::DiscountedMdp;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_value_vector(mdp: &DiscountedMdp, v: &[f64]) -> Result<()> {
    if v.len() != mdp.n_states() {
        return Err(CoreError::invalid(format!(
            "value vector has length {}, expected S = {}",
            v.len(),
            mdp.n_states()
        )));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(CoreError::invalid(format!("non-finite value entry {bad}")));
    }
    Ok(())
}

/// One-step optimality backup `(T v)(s) = max_a [r(s,a) + gamma * P(.|s,a)' v]`.
pub fn bellman_apply(mdp: &DiscountedMdp, v: &[f64]) -> Result<Vec<f64>> {
    check_value_vector(mdp, v)?;
    let gamma = mdp.discount();
    let mut out = vec![0.0; mdp.n_states()];
    for (s, slot) in out.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for a in 0..mdp.n_actions() {
            let q = mdp.reward(s, a) + gamma * dot(mdp.transition_row(s, a), v);
            if q > best {
                best = q;
            }
        }
        *slot = best;
    }
    Ok(out)
}

/// Policy backup `(T_pi v)(s) = r(s, pi(s)) + gamma * P(.|s,pi(s))' v`.
pub fn bellman_apply_policy(mdp: &DiscountedMdp, v: &[f64], policy: &[usize]) -> Result<Vec<f64>> {
    check_value_vector(mdp, v)?;
    mdp.validate_policy(policy)?;
    let gamma = mdp.discount();
    let mut out = vec![0.0; mdp.n_states()];
    for (s, slot) in out.iter_mut().enumerate() {
        let a = policy[s];
        *slot = mdp.reward(s, a) + gamma * dot(mdp.transition_row(s, a), v);
    }
    Ok(out)
}

/// Greedy policy with respect to `v`; ties broken by the lowest action index.
pub fn greedy_policy(mdp: &DiscountedMdp, v: &[f64]) -> Result<Vec<usize>> {
    check_value_vector(mdp, v)?;
    let gamma = mdp.discount();
    let mut policy = vec![0usize; mdp.n_states()];
    for (s, slot) in policy.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut best_a = 0usize;
        for a in 0..mdp.n_actions() {
            let q = mdp.reward(s, a) + gamma * dot(mdp.transition_row(s, a), v);
            if q > best {
                best = q;
                best_a = a;
            }
        }
        *slot = best_a;
    }
    Ok(policy)
}
