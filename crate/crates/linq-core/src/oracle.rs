//! Exact ground-truth computations: optimal values, policy evaluation, the
//! per-pair variance function, and realizability checks. These are the
//! scoring tools the experiment harness and the property tests rely on; the
//! learners never see them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bellman::{bellman_apply, bellman_apply_policy, greedy_policy};
use crate::error::{CoreError, Result};
use crate::linalg;
use crate::mdp::{DiscountedMdp, FeatureMap, LinearMdp};

/// Above this state count, `evaluate_policy` switches from the direct
/// `(I - gamma P_pi) v = r_pi` solve to fixed-point iteration.
const DIRECT_SOLVE_MAX_STATES: usize = 512;

/// Exact solution of an MDP: optimal value, Q-function, a greedy optimal
/// policy, and the final Bellman residual of the value-iteration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactSolution {
    pub v_star: Vec<f64>,
    /// `S*A` optimal Q-values, row-major.
    pub q_star: Vec<f64>,
    pub pi_star: Vec<usize>,
    /// Final `|T v - v|_inf` at termination.
    pub residual: f64,
}

/// Value iteration from `v = 0` until `|T v - v|_inf <= tol * (1 - gamma) / (2 gamma)`,
/// which guarantees `|v - v*|_inf <= tol`. The returned policy is greedy with
/// respect to the computed Q-function, ties to the lowest action index.
pub fn solve_optimal(mdp: &DiscountedMdp, tol: f64) -> Result<ExactSolution> {
    if !(tol > 0.0) {
        return Err(CoreError::invalid("tolerance must be positive"));
    }
    let gamma = mdp.discount();
    let threshold = tol * (1.0 - gamma) / (2.0 * gamma);
    // gamma^t * H <= threshold bounds the iteration count; double it for slack.
    let worst = ((mdp.horizon() / threshold).ln() / (1.0 / gamma).ln()).ceil();
    let cap = (2.0 * worst) as usize + 64;

    let mut v = vec![0.0; mdp.n_states()];
    let mut residual = f64::INFINITY;
    for _ in 0..cap {
        let next = bellman_apply(mdp, &v)?;
        residual = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if residual <= threshold {
            let q_star = q_from_value(mdp, &v);
            let pi_star = greedy_policy(mdp, &v)?;
            return Ok(ExactSolution {
                v_star: v,
                q_star,
                pi_star,
                residual,
            });
        }
    }
    Err(CoreError::internal(format!(
        "value iteration did not reach residual {threshold:e} within {cap} sweeps \
         (last residual {residual:e}, gamma {gamma})"
    )))
}

fn q_from_value(mdp: &DiscountedMdp, v: &[f64]) -> Vec<f64> {
    let gamma = mdp.discount();
    let mut q = vec![0.0; mdp.n_pairs()];
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let row = s * mdp.n_actions() + a;
            let p = mdp.transition_row_by_index(row);
            let pv: f64 = p.iter().zip(v).map(|(x, y)| x * y).sum();
            q[row] = mdp.rewards()[row] + gamma * pv;
        }
    }
    q
}

/// Exact policy value by solving `(I - gamma P_pi) v = r_pi` with LU.
pub fn evaluate_policy_direct(mdp: &DiscountedMdp, policy: &[usize]) -> Result<Vec<f64>> {
    mdp.validate_policy(policy)?;
    let s = mdp.n_states();
    let gamma = mdp.discount();
    let mut a = DMatrix::identity(s, s);
    let mut b = DVector::zeros(s);
    for (st, &act) in policy.iter().enumerate() {
        let p = mdp.transition_row(st, act);
        for (s2, &prob) in p.iter().enumerate() {
            a[(st, s2)] -= gamma * prob;
        }
        b[st] = mdp.reward(st, act);
    }
    // Singular systems cannot occur for gamma < 1; report if numerics disagree.
    let v = linalg::lu_solve(&a, &b).map_err(|e| {
        CoreError::internal(format!(
            "policy evaluation solve failed (gamma {gamma}): {e}"
        ))
    })?;
    Ok(v.iter().cloned().collect())
}

/// Policy value by iterating `v <- T_pi v` until `|v - v_pi|_inf <= tol`.
pub fn evaluate_policy_iterative(
    mdp: &DiscountedMdp,
    policy: &[usize],
    tol: f64,
) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(CoreError::invalid("tolerance must be positive"));
    }
    mdp.validate_policy(policy)?;
    let gamma = mdp.discount();
    let threshold = tol * (1.0 - gamma) / gamma;
    let worst = ((mdp.horizon() / threshold).ln() / (1.0 / gamma).ln()).ceil();
    let cap = (2.0 * worst) as usize + 64;
    let mut v = vec![0.0; mdp.n_states()];
    for _ in 0..cap {
        let next = bellman_apply_policy(mdp, &v, policy)?;
        let change = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if change <= threshold {
            return Ok(v);
        }
    }
    Err(CoreError::internal(format!(
        "policy evaluation did not converge within {cap} sweeps"
    )))
}

/// Policy value `v_pi`, accurate to `tol`; picks the direct solve at desk
/// scale and iteration beyond it. The two paths agree within `2 * tol`.
pub fn evaluate_policy(mdp: &DiscountedMdp, policy: &[usize], tol: f64) -> Result<Vec<f64>> {
    if mdp.n_states() <= DIRECT_SOLVE_MAX_STATES {
        evaluate_policy_direct(mdp, policy)
    } else {
        evaluate_policy_iterative(mdp, policy, tol)
    }
}

/// `max_s (v*(s) - v_pi(s))`, clamped at 0.
pub fn policy_error(mdp: &DiscountedMdp, policy: &[usize], tol: f64) -> Result<f64> {
    let solution = solve_optimal(mdp, tol)?;
    policy_error_with_solution(mdp, policy, &solution, tol)
}

/// `policy_error` against a precomputed optimal solution (the harness caches it).
pub fn policy_error_with_solution(
    mdp: &DiscountedMdp,
    policy: &[usize],
    solution: &ExactSolution,
    tol: f64,
) -> Result<f64> {
    let v_pi = evaluate_policy(mdp, policy, tol)?;
    let gap = solution
        .v_star
        .iter()
        .zip(&v_pi)
        .map(|(star, v)| star - v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(gap.max(0.0))
}

/// Per-pair variance of a value vector under the kernel:
/// `sigma_{s,a}[v] = P v^2 - (P v)^2`, computed in the shifted form
/// `sum_s' P(s'|s,a) (v(s') - P v)^2` so it cannot go negative; any residual
/// negative round-off is clamped to 0.
pub fn variance_function(mdp: &DiscountedMdp, v: &[f64]) -> Result<Vec<f64>> {
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
    let mut out = vec![0.0; mdp.n_pairs()];
    for (row, slot) in out.iter_mut().enumerate() {
        let p = mdp.transition_row_by_index(row);
        let mean: f64 = p.iter().zip(v).map(|(x, y)| x * y).sum();
        let var: f64 = p
            .iter()
            .zip(v)
            .map(|(x, y)| {
                let d = y - mean;
                x * d * d
            })
            .sum();
        *slot = var.max(0.0);
    }
    Ok(out)
}

/// Residual of the best approximation `Q_pi ~ r + Phi c` in the max norm.
/// Zero (to solver precision) whenever the kernel is feature-linear.
pub fn check_span(lm: &LinearMdp, policy: &[usize], tol: f64) -> Result<f64> {
    let mdp = lm.mdp();
    let v_pi = evaluate_policy(mdp, policy, tol)?;
    let gamma = mdp.discount();
    let pairs = mdp.n_pairs();
    let mut target = DVector::zeros(pairs);
    for row in 0..pairs {
        let p = mdp.transition_row_by_index(row);
        let pv: f64 = p.iter().zip(&v_pi).map(|(x, y)| x * y).sum();
        target[row] = gamma * pv; // Q_pi(s,a) - r(s,a)
    }
    let phi = linalg::from_row_major(pairs, lm.features().n_features(), lm.features().values());
    let coef = linalg::lstsq(&phi, &target)?;
    let fitted = phi * coef;
    Ok((fitted - target).amax())
}

/// Least-squares fit of the next-state weights from the kernel and features.
///
/// Returns `(psi_hat, xi_hat)` where `xi_hat` is the largest per-row total
/// variation distance `max_{s,a} TV(P(.|s,a), phi(s,a)' psi_hat)` with
/// `TV = 0.5 * l1`. `xi_hat` upper-bounds the misspecification of the fitted
/// model, not necessarily the minimum over all linear models.
pub fn fit_linear_model(mdp: &DiscountedMdp, features: &FeatureMap) -> Result<(Vec<f64>, f64)> {
    let pairs = mdp.n_pairs();
    if features.n_rows() != pairs {
        return Err(CoreError::invalid(format!(
            "feature map has {} rows, expected S*A = {}",
            features.n_rows(),
            pairs
        )));
    }
    let k = features.n_features();
    let phi = linalg::from_row_major(pairs, k, features.values());
    let r = linalg::rank(&phi);
    if r < k {
        return Err(CoreError::invalid(format!(
            "feature matrix is rank-deficient: rank {r} < K = {k}"
        )));
    }
    let p = linalg::from_row_major(pairs, mdp.n_states(), mdp.transitions());
    let psi_hat = linalg::lstsq_multi(&phi, &p)?;
    let fitted = &phi * &psi_hat;
    let mut xi_hat = 0.0f64;
    for row in 0..pairs {
        let l1: f64 = (0..mdp.n_states())
            .map(|c| (fitted[(row, c)] - p[(row, c)]).abs())
            .sum();
        xi_hat = xi_hat.max(0.5 * l1);
    }
    Ok((linalg::to_row_major(&psi_hat), xi_hat))
}

/// Evaluates `x = (I - gamma P_pi*)^{-1} sqrt(sigma_{v*} o pi*)` and returns
/// `|x|_inf / (1 - gamma)^{-3/2}`. The law of total variance keeps this ratio
/// O(1) on every instance, which is what drives the variance-reduced rate.
pub fn total_variance_bound(mdp: &DiscountedMdp, solution: &ExactSolution) -> Result<f64> {
    let sigma = variance_function(mdp, &solution.v_star)?;
    let s = mdp.n_states();
    let gamma = mdp.discount();
    let mut a = DMatrix::identity(s, s);
    let mut b = DVector::zeros(s);
    for (st, &act) in solution.pi_star.iter().enumerate() {
        let p = mdp.transition_row(st, act);
        for (s2, &prob) in p.iter().enumerate() {
            a[(st, s2)] -= gamma * prob;
        }
        b[st] = sigma[st * mdp.n_actions() + act].sqrt();
    }
    let x = linalg::lu_solve(&a, &b)?;
    Ok(x.amax() * (1.0 - gamma).powf(1.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::{one_hot_features, two_state};

    #[test]
    fn zero_rewards_solve_to_zero() {
        let mdp = DiscountedMdp::new(
            2,
            2,
            vec![0.0; 4],
            two_state(0.5).transitions().to_vec(),
            0.5,
        )
        .unwrap();
        let sol = solve_optimal(&mdp, 1e-10).unwrap();
        assert!(sol.v_star.iter().all(|&x| x.abs() <= 1e-10));
        assert_eq!(sol.pi_star, vec![0, 0]);
    }

    #[test]
    fn two_state_optimal_value() {
        let mdp = two_state(0.5);
        let sol = solve_optimal(&mdp, 1e-9).unwrap();
        assert!((sol.v_star[0] - 1.0).abs() <= 1e-9);
        assert!((sol.v_star[1] - 2.0).abs() <= 1e-9);
        assert_eq!(sol.pi_star[0], 1, "state 0 must go");
        assert!(sol.residual <= 1e-9);
    }

    #[test]
    fn constant_rewards_scale_to_horizon() {
        let c = 0.4;
        let gamma = 0.8;
        let mdp = DiscountedMdp::new(
            2,
            2,
            vec![c; 4],
            two_state(gamma).transitions().to_vec(),
            gamma,
        )
        .unwrap();
        let sol = solve_optimal(&mdp, 1e-10).unwrap();
        for &x in &sol.v_star {
            assert!((x - c / (1.0 - gamma)).abs() <= 1e-9);
        }
    }

    #[test]
    fn policy_evaluation_two_state() {
        let mdp = two_state(0.5);
        let always_stay = [0usize, 0];
        let v = evaluate_policy(&mdp, &always_stay, 1e-10).unwrap();
        assert!((v[0] - 0.0).abs() <= 1e-12);
        assert!((v[1] - 2.0).abs() <= 1e-12);
        let it = evaluate_policy_iterative(&mdp, &always_stay, 1e-10).unwrap();
        for (a, b) in v.iter().zip(&it) {
            assert!((a - b).abs() <= 2e-10);
        }
    }

    #[test]
    fn optimal_policy_has_zero_error() {
        let mdp = two_state(0.5);
        let sol = solve_optimal(&mdp, 1e-10).unwrap();
        let err = policy_error(&mdp, &sol.pi_star, 1e-10).unwrap();
        assert!(err <= 2e-10);
    }

    #[test]
    fn always_stay_error_is_one() {
        let mdp = two_state(0.5);
        let err = policy_error(&mdp, &[0, 0], 1e-10).unwrap();
        assert!((err - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn policy_error_bounded_by_horizon() {
        let mdp = two_state(0.5);
        for pi in [[0usize, 0], [0, 1], [1, 0], [1, 1]] {
            let err = policy_error(&mdp, &pi, 1e-10).unwrap();
            assert!(err >= 0.0 && err <= mdp.horizon());
        }
    }

    #[test]
    fn variance_of_point_mass_is_zero() {
        let mdp = two_state(0.5);
        let sigma = variance_function(&mdp, &[0.3, 1.8]).unwrap();
        // All two-state rows here are point masses.
        assert!(sigma.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn variance_uniform_two_point() {
        let mdp = crate::test_util::uniform_two_state(0.5);
        let sigma = variance_function(&mdp, &[0.0, 2.0]).unwrap();
        for &x in &sigma {
            assert!((x - 1.0).abs() <= 1e-12, "sigma = {x}");
        }
    }

    #[test]
    fn variance_of_constant_is_zero() {
        let mdp = crate::test_util::uniform_two_state(0.9);
        let sigma = variance_function(&mdp, &[1.7, 1.7]).unwrap();
        assert!(sigma.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn full_rank_one_hot_span_is_exact() {
        // K = S*A one-hot features span every Q-function.
        let mdp = two_state(0.5);
        let features = one_hot_features(&mdp);
        let psi = mdp.transitions().to_vec();
        let lm = LinearMdp::from_parts(mdp, features, psi).unwrap();
        for pi in [[0usize, 0], [1, 1], [0, 1]] {
            let res = check_span(&lm, &pi, 1e-12).unwrap();
            assert!(res <= 1e-10, "residual {res}");
        }
    }

    #[test]
    fn one_hot_fit_is_exact_for_any_kernel() {
        let mdp = crate::test_util::uniform_two_state(0.7);
        let features = one_hot_features(&mdp);
        let (_, xi_hat) = fit_linear_model(&mdp, &features).unwrap();
        assert!(xi_hat <= 1e-12);
    }

    #[test]
    fn rank_deficient_features_rejected() {
        let mdp = two_state(0.5);
        // Two identical columns: rank 1 < K = 2.
        let features = FeatureMap::new(2, [[0.5, 0.5]; 4].concat()).unwrap();
        let err = fit_linear_model(&mdp, &features).unwrap_err();
        assert!(err.to_string().contains("rank"));
    }

    #[test]
    fn deterministic_mdp_has_zero_variance_ratio() {
        let mdp = two_state(0.5);
        let sol = solve_optimal(&mdp, 1e-10).unwrap();
        let ratio = total_variance_bound(&mdp, &sol).unwrap();
        assert!(ratio.abs() <= 1e-9);
    }

    #[test]
    fn small_discount_ratio_within_envelope() {
        let mdp = crate::test_util::uniform_two_state(0.1);
        let sol = solve_optimal(&mdp, 1e-10).unwrap();
        let ratio = total_variance_bound(&mdp, &sol).unwrap();
        assert!(ratio <= 2.0, "ratio {ratio}");
    }
}
