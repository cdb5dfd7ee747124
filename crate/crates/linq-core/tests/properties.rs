//! Property tests for the structural facts the solvers rely on: contraction
//! and monotonicity of the Bellman operators, the variance inequalities
//! behind the confidence radii, span/closure of feature-linear kernels, and
//! agreement of the two policy-evaluation routes.

mod common;

use common::*;
use linq_core::bellman::{bellman_apply, bellman_apply_policy, greedy_policy};
use linq_core::instances::{make_random_linear_mdp, make_random_tabular};
use linq_core::linalg;
use linq_core::mdp::FeatureMap;
use linq_core::oracle::{
    check_span, evaluate_policy_direct, evaluate_policy_iterative, variance_function,
};
use linq_core::params::{decode_stacked_parts, StackedParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn contraction_on_random_value_pairs() {
    let mut rng = seeded(101);
    let mdps = [
        make_random_tabular(12, 3, 0.9, 1).unwrap(),
        make_random_tabular(25, 2, 0.5, 2).unwrap(),
        make_random_tabular(8, 4, 0.99, 3).unwrap(),
    ];
    for trial in 0..1000 {
        let mdp = &mdps[trial % mdps.len()];
        let gamma = mdp.discount();
        let v1 = random_values(&mut rng, mdp.n_states(), -5.0, 5.0);
        let v2 = random_values(&mut rng, mdp.n_states(), -5.0, 5.0);
        let t1 = bellman_apply(mdp, &v1).unwrap();
        let t2 = bellman_apply(mdp, &v2).unwrap();
        let lhs = t1
            .iter()
            .zip(&t2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let rhs = v1
            .iter()
            .zip(&v2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            lhs <= gamma * rhs + 1e-12,
            "contraction violated: {lhs} > {gamma} * {rhs}"
        );
    }
}

#[test]
fn greedy_policy_realizes_optimality_backup() {
    let mut rng = seeded(7);
    for seed in 0..20 {
        let mdp = make_random_tabular(15, 3, 0.9, seed).unwrap();
        let v = random_values(&mut rng, 15, 0.0, 10.0);
        let pi = greedy_policy(&mdp, &v).unwrap();
        let tv = bellman_apply(&mdp, &v).unwrap();
        let tpv = bellman_apply_policy(&mdp, &v, &pi).unwrap();
        for (a, b) in tv.iter().zip(&tpv) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn variance_triangle_inequality() {
    // sqrt(sigma_k[V1 + V2]) <= sqrt(sigma_k[V1]) + sqrt(sigma_k[V2])
    let mut rng = seeded(23);
    let mdps = [
        make_random_tabular(20, 2, 0.9, 11).unwrap(),
        make_random_tabular(10, 3, 0.8, 12).unwrap(),
    ];
    for trial in 0..1000 {
        let mdp = &mdps[trial % mdps.len()];
        let s = mdp.n_states();
        let v1 = random_values(&mut rng, s, -3.0, 3.0);
        let v2 = random_values(&mut rng, s, -3.0, 3.0);
        let sum: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a + b).collect();
        let s1 = variance_function(mdp, &v1).unwrap();
        let s2 = variance_function(mdp, &v2).unwrap();
        let s12 = variance_function(mdp, &sum).unwrap();
        let row = rng.gen_range(0..mdp.n_pairs());
        let slack = s1[row].sqrt() + s2[row].sqrt() - s12[row].sqrt();
        assert!(slack >= -1e-10, "triangle inequality violated by {slack}");
    }
}

#[test]
fn convex_combination_of_standard_deviations() {
    // sum_k phi_k(s,a) sqrt(sigma_k[V]) <= sqrt(sigma_{s,a}[V]) on anchored
    // instances, where sigma_k is taken at the anchor pairs.
    let mut rng = seeded(31);
    let instances = [
        make_random_linear_mdp(20, 3, 6, 0.9, 41, true).unwrap(),
        make_random_linear_mdp(15, 2, 4, 0.8, 42, true).unwrap(),
    ];
    for trial in 0..1000 {
        let (lm, anchors) = &instances[trial % instances.len()];
        let mdp = lm.mdp();
        let v = random_values(&mut rng, mdp.n_states(), -4.0, 4.0);
        let sigma = variance_function(mdp, &v).unwrap();
        let row = rng.gen_range(0..mdp.n_pairs());
        let phi = lm.features().row(row);
        let lhs: f64 = anchors
            .indices()
            .iter()
            .enumerate()
            .map(|(k, &anchor_row)| phi[k] * sigma[anchor_row].sqrt())
            .sum();
        let rhs = sigma[row].sqrt();
        assert!(
            lhs <= rhs + 1e-10,
            "convex-combination violated: {lhs} > {rhs}"
        );
    }
}

/// Max-norm residual of projecting a Q-vector onto `Span(r, Phi)`.
fn closure_residual(q: &DVector<f64>, rewards: &[f64], features: &FeatureMap) -> f64 {
    let pairs = rewards.len();
    let k = features.n_features();
    let mut design = DMatrix::zeros(pairs, k + 1);
    for row in 0..pairs {
        design[(row, 0)] = rewards[row];
        for c in 0..k {
            design[(row, c + 1)] = features.row(row)[c];
        }
    }
    let coef = linalg::lstsq(&design, q).unwrap();
    (design * coef - q).amax()
}

/// Q-space Bellman backup `T Q = r + gamma P max_a' Q(., a')`.
fn bellman_q(mdp: &linq_core::mdp::DiscountedMdp, q: &DVector<f64>) -> DVector<f64> {
    let (s_n, a_n) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![f64::NEG_INFINITY; s_n];
    for s in 0..s_n {
        for a in 0..a_n {
            v[s] = v[s].max(q[s * a_n + a]);
        }
    }
    let mut out = DVector::zeros(mdp.n_pairs());
    for row in 0..mdp.n_pairs() {
        let p = mdp.transition_row_by_index(row);
        let pv: f64 = p.iter().zip(&v).map(|(x, y)| x * y).sum();
        out[row] = mdp.rewards()[row] + mdp.discount() * pv;
    }
    out
}

#[test]
fn span_contains_policy_q_functions() {
    // Proposition: Q_pi lies in Span(r, phi) on every feature-linear kernel.
    let mut rng = seeded(47);
    for seed in 0..20 {
        let (lm, _) = make_random_linear_mdp(18, 3, 5, 0.9, 100 + seed, seed % 2 == 0).unwrap();
        for _ in 0..5 {
            let pi = random_policy(&mut rng, 18, 3);
            let res = check_span(&lm, &pi, 1e-12).unwrap();
            assert!(res <= 1e-8, "span residual {res:e} (seed {seed})");
        }
    }
}

#[test]
fn bellman_closure_zero_on_linear_kernels() {
    // For random Q in Span(r, phi), T Q stays in the span.
    let mut rng = seeded(53);
    for seed in 0..20 {
        let (lm, _) = make_random_linear_mdp(16, 2, 4, 0.85, 200 + seed, true).unwrap();
        let mdp = lm.mdp();
        let k = lm.features().n_features();
        for _ in 0..5 {
            let coef: Vec<f64> = (0..=k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut q = DVector::zeros(mdp.n_pairs());
            for row in 0..mdp.n_pairs() {
                let mut acc = coef[0] * mdp.rewards()[row];
                for (c, &f) in lm.features().row(row).iter().enumerate() {
                    acc += coef[c + 1] * f;
                }
                q[row] = acc;
            }
            let tq = bellman_q(mdp, &q);
            let res = closure_residual(&tq, mdp.rewards(), lm.features());
            assert!(res <= 1e-8, "closure residual {res:e}");
        }
    }
}

#[test]
fn bellman_closure_positive_on_nonlinear_kernels() {
    // Random tabular kernels paired with low-dimensional stochastic features
    // leave the span under the backup; the residual stays bounded away from 0.
    let mut rng = seeded(59);
    for seed in 0..5 {
        let mdp = make_random_tabular(24, 2, 0.9, 300 + seed).unwrap();
        let pairs = mdp.n_pairs();
        let k = 4;
        let mut values = vec![0.0; pairs * k];
        for row in 0..pairs {
            let mut sum = 0.0;
            for c in 0..k {
                let e = -(1.0f64 - rng.gen::<f64>()).ln();
                values[row * k + c] = e;
                sum += e;
            }
            for c in 0..k {
                values[row * k + c] /= sum;
            }
        }
        let features = FeatureMap::new_stochastic(k, values).unwrap();
        let coef: Vec<f64> = (0..=k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut q = DVector::zeros(pairs);
        for row in 0..pairs {
            let mut acc = coef[0] * mdp.rewards()[row];
            for (c, &f) in features.row(row).iter().enumerate() {
                acc += coef[c + 1] * f;
            }
            q[row] = acc;
        }
        let tq = bellman_q(&mdp, &q);
        let res = closure_residual(&tq, mdp.rewards(), &features);
        assert!(
            res > 1e-4,
            "expected positive closure residual, got {res:e} (seed {seed})"
        );
    }
}

#[test]
fn policy_evaluation_routes_agree() {
    let mut rng = seeded(61);
    let tol = 1e-9;
    for trial in 0..100 {
        let s = 5 + (trial % 20);
        let a = 2 + (trial % 3);
        let mdp = make_random_tabular(s, a, 0.9, 400 + trial as u64).unwrap();
        let pi = random_policy(&mut rng, s, a);
        let direct = evaluate_policy_direct(&mdp, &pi).unwrap();
        let iterative = evaluate_policy_iterative(&mdp, &pi, tol).unwrap();
        for (x, y) in direct.iter().zip(&iterative) {
            assert!((x - y).abs() <= 2.0 * tol, "routes disagree: {x} vs {y}");
        }
    }
}

proptest! {
    // Appending a vector to theta never lowers the decoded value anywhere,
    // and the decoded action stays in range.
    #[test]
    fn decode_monotone_under_append(
        w1 in proptest::collection::vec(-5.0f64..5.0, 4),
        w2 in proptest::collection::vec(-5.0f64..5.0, 4),
        state in 0usize..2,
    ) {
        let mdp = two_state(0.5);
        let features = one_hot_features(&mdp);
        let mut theta = StackedParams::single_zero(4);
        theta.push(0, 1, w1);
        let (before, a_before) = decode_stacked_parts(
            mdp.rewards(), 0.5, 2, &features, &theta, state).unwrap();
        theta.push(0, 2, w2);
        let (after, a_after) = decode_stacked_parts(
            mdp.rewards(), 0.5, 2, &features, &theta, state).unwrap();
        prop_assert!(after >= before);
        prop_assert!(a_before < 2 && a_after < 2);
    }

    // The optimality backup dominates every policy backup pointwise.
    #[test]
    fn optimality_backup_dominates(
        v in proptest::collection::vec(0.0f64..10.0, 2),
        pi in proptest::collection::vec(0usize..2, 2),
    ) {
        let mdp = two_state(0.5);
        let tv = bellman_apply(&mdp, &v).unwrap();
        let tpv = bellman_apply_policy(&mdp, &v, &pi).unwrap();
        for (a, b) in tv.iter().zip(&tpv) {
            prop_assert!(a + 1e-12 >= *b);
        }
    }
}

#[test]
fn span_residual_positive_on_perturbed_kernel() {
    // Mixing the kernel away from the linear model leaves Q_pi outside
    // Span(r, phi) by a measurable margin.
    let (lm, _) = make_random_linear_mdp(20, 3, 5, 0.9, 1234, true).unwrap();
    let perturbed = linq_core::instances::perturb_kernel(&lm, 0.3, 99).unwrap();
    let broken =
        linq_core::mdp::LinearMdp::from_parts(perturbed, lm.features().clone(), lm.psi().to_vec());
    // The factorization residual check must reject the perturbed kernel...
    assert!(broken.is_err());
    // ...so evaluate the span residual directly on the perturbed MDP.
    let perturbed = linq_core::instances::perturb_kernel(&lm, 0.3, 99).unwrap();
    let mut rng = seeded(5);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let pi = random_policy(&mut rng, 20, 3);
        let v_pi = linq_core::oracle::evaluate_policy(&perturbed, &pi, 1e-12).unwrap();
        let gamma = perturbed.discount();
        let pairs = perturbed.n_pairs();
        let mut target = DVector::zeros(pairs);
        for row in 0..pairs {
            let p = perturbed.transition_row_by_index(row);
            let pv: f64 = p.iter().zip(&v_pi).map(|(x, y)| x * y).sum();
            target[row] = gamma * pv;
        }
        let phi = linalg::from_row_major(pairs, 5, lm.features().values());
        let coef = linalg::lstsq(&phi, &target).unwrap();
        let res = (phi * coef - target).amax();
        worst = worst.max(res);
    }
    assert!(
        worst > 1e-6,
        "perturbed-kernel span residual only {worst:e}"
    );
}

#[test]
fn generator_outputs_revalidate() {
    // Rebuild each generated instance through the checked constructors: the
    // factorization residual and every distribution invariant must hold.
    for seed in 0..10u64 {
        let (lm, _) = make_random_linear_mdp(14, 3, 4, 0.9, 900 + seed, seed % 2 == 0).unwrap();
        linq_core::mdp::LinearMdp::from_parts(
            lm.mdp().clone(),
            lm.features().clone(),
            lm.psi().to_vec(),
        )
        .expect("random linear instance failed re-validation");

        let (lm, _) = linq_core::instances::make_soft_aggregation_mdp(10, 2, 3, 0.85, 900 + seed)
            .unwrap();
        assert!(lm.is_soft_aggregation());
        linq_core::mdp::LinearMdp::from_parts(
            lm.mdp().clone(),
            lm.features().clone(),
            lm.psi().to_vec(),
        )
        .expect("soft aggregation instance failed re-validation");
    }
}

#[test]
fn anchor_recovery_is_exact_for_100_seeds() {
    for seed in 0..100u64 {
        let (lm, planted) = make_random_linear_mdp(12, 3, 4, 0.9, 2000 + seed, true).unwrap();
        let found = linq_core::instances::find_anchors(
            lm.features(),
            linq_core::instances::ANCHOR_FEASIBILITY_TOL,
        )
        .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert_eq!(found.indices(), planted.indices(), "seed {seed}");
    }
}
