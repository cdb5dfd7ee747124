//! Instance families, anchor discovery and feature regularity.
//!
//! Generators are pure functions of their size parameters and a seed; every
//! output satisfies the `LinearMdp`/`FeatureMap` invariants by construction
//! (and the tests re-run the validators to make sure).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::linalg;
use crate::mdp::{DiscountedMdp, FeatureMap, LinearMdp};

/// Feasibility tolerance on the anchor convex-combination equations.
pub const ANCHOR_FEASIBILITY_TOL: f64 = 1e-8;

/// A representative state-action set: the K row indices, the stacked feature
/// block `Phi_K` with its inverse, and the regularity constant
/// `L = max_{s,a} |phi(s,a)' Phi_K^{-1}|_1`.
///
/// When `anchored` is set, every feature row is a convex combination of the
/// K anchor rows and `weights` caches the combination coefficients row by row.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    indices: Vec<usize>,
    /// `K x K`, row-major; row `j` is the feature row at `indices[j]`.
    phi_k: Vec<f64>,
    /// `K x K`, row-major.
    phi_k_inv: Vec<f64>,
    regularity: f64,
    anchored: bool,
    /// `(S*A) x K` convex weights, row-major; populated iff `anchored`.
    weights: Option<Vec<f64>>,
}

impl AnchorSet {
    /// Builds the set from explicit row indices, inverting `Phi_K` and
    /// computing the regularity constant.
    pub fn from_indices(features: &FeatureMap, indices: &[usize]) -> Result<Self> {
        let k = features.n_features();
        if indices.len() != k {
            return Err(CoreError::invalid(format!(
                "representative set has {} rows, expected K = {}",
                indices.len(),
                k
            )));
        }
        for &i in indices {
            if i >= features.n_rows() {
                return Err(CoreError::invalid(format!(
                    "representative row index {i} out of range ({} rows)",
                    features.n_rows()
                )));
            }
        }
        let mut phi_k = Vec::with_capacity(k * k);
        for &i in indices {
            phi_k.extend_from_slice(features.row(i));
        }
        let m = linalg::from_row_major(k, k, &phi_k);
        let (inv, condition) = linalg::invert_with_condition(&m).map_err(|_| {
            CoreError::invalid(format!(
                "Phi_K is singular for the chosen representative set {indices:?}"
            ))
        })?;
        // Identity check within 1e-8, scaled by the condition estimate to
        // catch near-singular blocks the inversion glossed over.
        let eye = &m * &inv;
        let mut worst = 0.0f64;
        for r in 0..k {
            for c in 0..k {
                let want = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((eye[(r, c)] - want).abs());
            }
        }
        if worst > 1e-8 {
            return Err(CoreError::invalid(format!(
                "Phi_K inverse residual {worst:e} exceeds 1e-8 (condition ~ {condition:.3e})"
            )));
        }
        let regularity = regularity_from_inverse(features, &inv);
        Ok(Self {
            indices: indices.to_vec(),
            phi_k,
            phi_k_inv: linalg::to_row_major(&inv),
            regularity,
            anchored: false,
            weights: None,
        })
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// `K x K` feature block, row-major.
    #[inline]
    pub fn phi_k(&self) -> &[f64] {
        &self.phi_k
    }

    #[inline]
    pub fn phi_k_inv(&self) -> &[f64] {
        &self.phi_k_inv
    }

    /// The regularity constant `L >= 1`.
    #[inline]
    pub fn regularity(&self) -> f64 {
        self.regularity
    }

    #[inline]
    pub fn is_anchored(&self) -> bool {
        self.anchored
    }

    /// Cached convex-combination weights, `(S*A) x K` row-major.
    #[inline]
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// True when the anchor feature rows are the K unit vectors, which is the
    /// normalization the variance-reduced learner requires.
    pub fn has_unit_rows(&self) -> bool {
        let k = self.indices.len();
        (0..k).all(|r| {
            (0..k).all(|c| {
                let want = if r == c { 1.0 } else { 0.0 };
                (self.phi_k[r * k + c] - want).abs() <= 1e-12
            })
        })
    }

    /// Verifies the cached weights against the anchors and marks the set
    /// anchored. Internal to construction paths.
    fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.anchored = true;
        self.weights = Some(weights);
        self
    }
}

fn regularity_from_inverse(features: &FeatureMap, inv: &DMatrix<f64>) -> f64 {
    let k = features.n_features();
    let mut worst = 0.0f64;
    let mut scratch = vec![0.0; k];
    for row in 0..features.n_rows() {
        let phi = features.row(row);
        for c in 0..k {
            let mut acc = 0.0;
            for (r, &f) in phi.iter().enumerate() {
                acc += f * inv[(r, c)];
            }
            scratch[c] = acc;
        }
        let l1: f64 = scratch.iter().map(|x| x.abs()).sum();
        worst = worst.max(l1);
    }
    worst
}

/// `L = max_{s,a} |phi(s,a)' Phi_K^{-1}|_1` for an explicit K-subset of rows.
pub fn regularity_l(features: &FeatureMap, indices: &[usize]) -> Result<f64> {
    Ok(AnchorSet::from_indices(features, indices)?.regularity())
}

/// Picks K feature rows with an invertible, well-conditioned `Phi_K` by
/// greedy column-pivoted elimination on `Phi'`. This realizes the paper's
/// "pick the representative set almost arbitrarily" step when no anchors are
/// planted; the achieved `L` is whatever it is, and is reported.
pub fn representative_set(features: &FeatureMap) -> Result<AnchorSet> {
    let k = features.n_features();
    let n = features.n_rows();
    if n < k {
        return Err(CoreError::invalid(format!(
            "need at least K = {k} rows, have {n}"
        )));
    }
    // Work on Phi' (K x n); eliminate row by row, picking the column (= data
    // row) with the largest absolute pivot.
    let mut work = DMatrix::zeros(k, n);
    for row in 0..n {
        for c in 0..k {
            work[(c, row)] = features.row(row)[c];
        }
    }
    let mut chosen = Vec::with_capacity(k);
    let mut used = vec![false; n];
    for step in 0..k {
        let mut best = (0usize, -1.0f64);
        for col in 0..n {
            if used[col] {
                continue;
            }
            let v = work[(step, col)].abs();
            if v > best.1 {
                best = (col, v);
            }
        }
        if best.1 <= 0.0 {
            return Err(CoreError::invalid(format!(
                "feature matrix is rank-deficient at step {step}; no invertible Phi_K exists"
            )));
        }
        let pivot_col = best.0;
        used[pivot_col] = true;
        chosen.push(pivot_col);
        let pivot = work[(step, pivot_col)];
        for col in 0..n {
            if used[col] {
                continue;
            }
            let factor = work[(step, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for r in step..k {
                let sub = work[(r, pivot_col)];
                work[(r, col)] -= factor * sub;
            }
        }
    }
    chosen.sort_unstable();
    AnchorSet::from_indices(features, &chosen)
}

fn exp_draw(rng: &mut ChaCha8Rng) -> f64 {
    // -ln(1 - u) with u in [0, 1): strictly positive.
    let u: f64 = rng.gen::<f64>();
    -(1.0 - u).ln()
}

/// Uniform draw from the simplex (Dirichlet(1, ..., 1)): normalized
/// exponentials.
fn simplex_draw(rng: &mut ChaCha8Rng, k: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), k);
    let mut sum = 0.0;
    for slot in out.iter_mut() {
        let e = exp_draw(rng);
        *slot = e;
        sum += e;
    }
    for slot in out.iter_mut() {
        *slot /= sum;
    }
}

/// A sparse random distribution over `n` outcomes with at least two nonzero
/// entries; support sizes are skewed toward small to diversify variances.
fn sparse_distribution(rng: &mut ChaCha8Rng, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), n);
    out.fill(0.0);
    if n == 1 {
        out[0] = 1.0;
        return;
    }
    // Quartic skew: mostly small supports (slow mixing, high variance rows)
    // with occasional dense ones, maximizing variance diversity.
    let u: f64 = rng.gen();
    let support = (2 + ((n - 2) as f64 * u * u * u * u) as usize).min(n);
    // Partial Fisher-Yates over 0..n to pick the support.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..support {
        let j = i + (rng.next_u64() as usize) % (n - i);
        idx.swap(i, j);
    }
    let mut sum = 0.0;
    let mut raw = vec![0.0; support];
    for r in raw.iter_mut() {
        *r = exp_draw(rng);
        sum += *r;
    }
    for (i, &r) in raw.iter().enumerate() {
        out[idx[i]] = r / sum;
    }
}

/// Renormalizes a nonnegative row to sum exactly to 1 in floating point.
fn renormalize(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Random feature-linear MDP.
///
/// With `anchored` set, the first K `(s, a)` rows carry the K unit feature
/// vectors (so the anchor assumption holds with `L = 1` and the anchors'
/// transition rows equal the psi rows); the remaining rows are uniform draws
/// from the simplex. Without it, all rows are simplex draws and the returned
/// set is a greedily pivoted representative set.
pub fn make_random_linear_mdp(
    n_states: usize,
    n_actions: usize,
    n_features: usize,
    discount: f64,
    seed: u64,
    anchored: bool,
) -> Result<(LinearMdp, AnchorSet)> {
    let pairs = n_states * n_actions;
    if n_features == 0 || n_features > pairs {
        return Err(CoreError::invalid(format!(
            "need 1 <= K <= S*A, got K = {n_features}, S*A = {pairs}"
        )));
    }
    if anchored && 2 * n_features > pairs {
        return Err(CoreError::invalid(format!(
            "anchored instances need K <= S*A - K, got K = {n_features}, S*A = {pairs}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = n_features;

    let mut values = vec![0.0; pairs * k];
    let start = if anchored {
        for j in 0..k {
            values[j * k + j] = 1.0;
        }
        k
    } else {
        0
    };
    for row in start..pairs {
        simplex_draw(&mut rng, k, &mut values[row * k..(row + 1) * k]);
    }
    let features = FeatureMap::new_stochastic(k, values)?;

    let mut psi = vec![0.0; k * n_states];
    for kk in 0..k {
        sparse_distribution(
            &mut rng,
            n_states,
            &mut psi[kk * n_states..(kk + 1) * n_states],
        );
    }

    let rewards: Vec<f64> = (0..pairs).map(|_| rng.gen::<f64>()).collect();

    let lm = LinearMdp::from_factors(features, psi, rewards, n_states, n_actions, discount)?;
    let anchors = if anchored {
        let indices: Vec<usize> = (0..k).collect();
        let set = AnchorSet::from_indices(lm.features(), &indices)?;
        // Unit anchors make each feature row its own weight vector.
        set.with_weights(lm.features().values().to_vec())
    } else {
        representative_set(lm.features())?
    };
    Ok((lm, anchors))
}

/// Soft state aggregation instance: both the aggregation rows `phi(s, a)` and
/// the disaggregation rows `psi_k` are probability distributions, so the
/// kernel is stochastic automatically.
pub fn make_soft_aggregation_mdp(
    n_states: usize,
    n_actions: usize,
    n_features: usize,
    discount: f64,
    seed: u64,
) -> Result<(LinearMdp, AnchorSet)> {
    let pairs = n_states * n_actions;
    if n_features == 0 || n_features > pairs {
        return Err(CoreError::invalid(format!(
            "need 1 <= K <= S*A, got K = {n_features}, S*A = {pairs}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = n_features;
    let mut values = vec![0.0; pairs * k];
    for row in 0..pairs {
        simplex_draw(&mut rng, k, &mut values[row * k..(row + 1) * k]);
    }
    let features = FeatureMap::new_stochastic(k, values)?;
    let mut psi = vec![0.0; k * n_states];
    for kk in 0..k {
        simplex_draw(
            &mut rng,
            n_states,
            &mut psi[kk * n_states..(kk + 1) * n_states],
        );
    }
    let rewards: Vec<f64> = (0..pairs).map(|_| rng.gen::<f64>()).collect();
    let lm = LinearMdp::from_factors(features, psi, rewards, n_states, n_actions, discount)?;
    let anchors = representative_set(lm.features())?;
    Ok((lm, anchors))
}

/// Random dense tabular MDP (no feature structure); used as the inner
/// instance of the lower-bound embedding and for oracle stress tests.
pub fn make_random_tabular(
    n_states: usize,
    n_actions: usize,
    discount: f64,
    seed: u64,
) -> Result<DiscountedMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(CoreError::invalid(
            "n_states and n_actions must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = n_states * n_actions;
    let mut transitions = vec![0.0; pairs * n_states];
    for row in 0..pairs {
        sparse_distribution(
            &mut rng,
            n_states,
            &mut transitions[row * n_states..(row + 1) * n_states],
        );
    }
    let rewards: Vec<f64> = (0..pairs).map(|_| rng.gen::<f64>()).collect();
    DiscountedMdp::new(n_states, n_actions, rewards, transitions, discount)
}

/// Index bookkeeping of the lower-bound embedding: how the inner instance
/// sits inside the constructed feature-linear one.
#[derive(Debug, Clone)]
pub struct LowerBoundEmbedding {
    pub inner_states: usize,
    pub inner_actions: usize,
    /// The absorbing zero-reward state appended after the inner states.
    pub absorbing_state: usize,
    /// The extra action appended after the inner actions.
    pub extra_action: usize,
}

impl LowerBoundEmbedding {
    /// Restricts an outer policy to the inner instance. The extra action is
    /// never optimal on inner states (it yields 0 forever against nonnegative
    /// alternatives and loses lowest-index ties), so a greedy outer policy
    /// restricts cleanly; picking it anyway is reported as an error.
    pub fn restrict_policy(&self, outer: &[usize]) -> Result<Vec<usize>> {
        if outer.len() < self.inner_states {
            return Err(CoreError::invalid(format!(
                "outer policy has {} states, need at least {}",
                outer.len(),
                self.inner_states
            )));
        }
        let mut inner = Vec::with_capacity(self.inner_states);
        for (s, &a) in outer.iter().take(self.inner_states).enumerate() {
            if a >= self.inner_actions {
                return Err(CoreError::invalid(format!(
                    "outer policy picks the appended action at inner state {s}"
                )));
            }
            inner.push(a);
        }
        Ok(inner)
    }
}

/// Embeds an arbitrary tabular MDP `M'` into a feature-linear MDP with
/// `K = S'A' + 1`: one absorbing zero-reward state and one extra action are
/// appended; inner pairs keep their kernel rows and carry unit feature
/// vectors, and every appended pair jumps to the absorbing state under the
/// shared K-th feature.
pub fn make_lower_bound_instance(
    inner: &DiscountedMdp,
) -> Result<(LinearMdp, AnchorSet, LowerBoundEmbedding)> {
    let s_in = inner.n_states();
    let a_in = inner.n_actions();
    let k = s_in * a_in + 1;
    let s_out = s_in + 1;
    let a_out = a_in + 1;
    let pairs_out = s_out * a_out;
    let absorbing = s_in;

    let mut features = vec![0.0; pairs_out * k];
    let mut rewards = vec![0.0; pairs_out];
    let mut psi = vec![0.0; k * s_out];

    for s in 0..s_out {
        for a in 0..a_out {
            let row = s * a_out + a;
            if s < s_in && a < a_in {
                let inner_pair = s * a_in + a;
                features[row * k + inner_pair] = 1.0;
                rewards[row] = inner.reward(s, a);
            } else {
                features[row * k + (k - 1)] = 1.0;
            }
        }
    }
    for inner_pair in 0..s_in * a_in {
        let (s, a) = (inner_pair / a_in, inner_pair % a_in);
        let p = inner.transition_row(s, a);
        for (s2, &prob) in p.iter().enumerate() {
            psi[inner_pair * s_out + s2] = prob;
        }
    }
    // K-th component: point mass on the absorbing state.
    psi[(k - 1) * s_out + absorbing] = 1.0;

    let feature_map = FeatureMap::new_stochastic(k, features)?;
    let lm = LinearMdp::from_factors(feature_map, psi, rewards, s_out, a_out, inner.discount())?;

    // Anchors: the inner pairs in order, then one appended pair for the
    // K-th unit vector.
    let mut indices: Vec<usize> = Vec::with_capacity(k);
    for s in 0..s_in {
        for a in 0..a_in {
            indices.push(s * a_out + a);
        }
    }
    indices.push(absorbing * a_out); // (s0, action 0) has phi = 1_K
    let set = AnchorSet::from_indices(lm.features(), &indices)?
        .with_weights(lm.features().values().to_vec());

    let embedding = LowerBoundEmbedding {
        inner_states: s_in,
        inner_actions: a_in,
        absorbing_state: absorbing,
        extra_action: a_in,
    };
    Ok((lm, set, embedding))
}

/// Mixes every kernel row with an independent random distribution at weight
/// `xi`, producing a tabular MDP at total-variation distance at most `xi`
/// per row from the linear model.
pub fn perturb_kernel(lm: &LinearMdp, xi: f64, seed: u64) -> Result<DiscountedMdp> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(CoreError::invalid(format!(
            "xi must lie in [0, 1], got {xi}"
        )));
    }
    let mdp = lm.mdp();
    if xi == 0.0 {
        return Ok(mdp.clone());
    }
    let s = mdp.n_states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = mdp.transitions().to_vec();
    // Sparse noise rows: diverse perturbation directions, so the mixture
    // actually disturbs the kernel row by row instead of shifting every row
    // toward the same near-uniform average.
    let mut noise = vec![0.0; s];
    for row in 0..mdp.n_pairs() {
        sparse_distribution(&mut rng, s, &mut noise);
        let slice = &mut transitions[row * s..(row + 1) * s];
        for (t, &u) in slice.iter_mut().zip(&noise) {
            *t = (1.0 - xi) * *t + xi * u;
        }
    }
    DiscountedMdp::new(
        s,
        mdp.n_actions(),
        mdp.rewards().to_vec(),
        transitions,
        mdp.discount(),
    )
}

/// Anchor discovery by vertex enumeration over the feature rows.
///
/// Runs one feasibility program per distinct row ("is this row a convex
/// combination of the others?"); rows that are not representable are the
/// hull vertices. Succeeds iff exactly K vertices exist and every row is a
/// convex combination of them within `tol`; the convex weights are cached on
/// the returned set.
pub fn find_anchors(features: &FeatureMap, tol: f64) -> Result<AnchorSet> {
    if !features.is_stochastic() {
        return Err(CoreError::invalid(
            "anchor discovery requires stochastic feature rows",
        ));
    }
    let k = features.n_features();
    let n = features.n_rows();

    // Deduplicate rows (exact duplicates are common: planted anchors, padded
    // lower-bound rows) keeping first occurrences.
    let mut uniq: Vec<usize> = Vec::new();
    'rows: for row in 0..n {
        for &u in &uniq {
            if rows_equal(features.row(row), features.row(u)) {
                continue 'rows;
            }
        }
        uniq.push(row);
    }

    let mut vertices: Vec<usize> = Vec::new();
    if uniq.len() == 1 {
        vertices.push(uniq[0]);
    } else {
        for (i, &row) in uniq.iter().enumerate() {
            let others: Vec<usize> = uniq
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &r)| r)
                .collect();
            if !is_convex_combination(features, row, &others, tol).0 {
                vertices.push(row);
            }
        }
    }

    if vertices.len() > k {
        return Err(CoreError::AnchorsNotFound(vertices));
    }
    if vertices.len() < k {
        return Err(CoreError::invalid(format!(
            "found {} hull vertices, need exactly K = {}; the rows span a deficient face",
            vertices.len(),
            k
        )));
    }

    let set = AnchorSet::from_indices(features, &vertices)?;
    // Cache per-row convex weights against the anchors.
    let mut weights = vec![0.0; n * k];
    for row in 0..n {
        let (ok, lambda) = is_convex_combination(features, row, &vertices, tol);
        if !ok {
            return Err(CoreError::internal(format!(
                "row {row} is not representable by the {k} discovered vertices within {tol:e}"
            )));
        }
        weights[row * k..(row + 1) * k].copy_from_slice(&lambda);
    }
    Ok(set.with_weights(weights))
}

fn rows_equal(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

/// Feasibility program: nonnegative least squares on the stacked system
/// `[candidates'; 1'] lambda = [row; 1]`. Feasible iff the residual of every
/// equation is within `tol`.
fn is_convex_combination(
    features: &FeatureMap,
    row: usize,
    candidates: &[usize],
    tol: f64,
) -> (bool, Vec<f64>) {
    let k = features.n_features();
    let m = candidates.len();
    let mut a = DMatrix::zeros(k + 1, m);
    for (j, &c) in candidates.iter().enumerate() {
        let phi = features.row(c);
        for r in 0..k {
            a[(r, j)] = phi[r];
        }
        a[(k, j)] = 1.0;
    }
    let mut b = DVector::zeros(k + 1);
    for (r, &x) in features.row(row).iter().enumerate() {
        b[r] = x;
    }
    b[k] = 1.0;
    let (lambda, _) = linalg::nnls(&a, &b);
    let residual = (&a * &lambda - &b).amax();
    (residual <= tol, lambda.iter().cloned().collect())
}

/// Builds the feature map of convex weights against the anchors: anchor rows
/// become unit vectors, so the result satisfies the normalization the
/// variance-reduced learner requires while representing the same kernel.
pub fn anchor_weight_features(features: &FeatureMap, anchors: &AnchorSet) -> Result<FeatureMap> {
    let weights = anchors.weights().ok_or_else(|| {
        CoreError::invalid("anchor set carries no convex weights; run find_anchors first")
    })?;
    let k = anchors.n_features();
    debug_assert_eq!(weights.len(), features.n_rows() * k);
    // Weight rows solve a feasibility program to 1e-8; renormalize so the
    // stochastic validation at 1e-12 passes.
    let mut values = weights.to_vec();
    for row in 0..features.n_rows() {
        let slice = &mut values[row * k..(row + 1) * k];
        for x in slice.iter_mut() {
            *x = x.max(0.0);
        }
        renormalize(slice);
    }
    FeatureMap::new_stochastic(k, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{fit_linear_model, solve_optimal};

    #[test]
    fn anchored_instance_plants_unit_rows() {
        let (lm, anchors) = make_random_linear_mdp(20, 3, 5, 0.9, 11, true).unwrap();
        assert!(anchors.is_anchored());
        assert!(anchors.has_unit_rows());
        assert_eq!(anchors.indices(), &[0, 1, 2, 3, 4]);
        assert!((anchors.regularity() - 1.0).abs() <= 1e-12);
        // Anchor transition rows equal the psi rows exactly.
        for k in 0..5 {
            let (s, a) = (k / 3, k % 3);
            assert_eq!(lm.mdp().transition_row(s, a), lm.psi_row(k));
        }
    }

    #[test]
    fn generated_rows_are_distributions() {
        let (lm, _) = make_random_linear_mdp(15, 2, 4, 0.8, 3, false).unwrap();
        // DiscountedMdp::new validated on construction; spot-check a row sum.
        let row = lm.mdp().transition_row(7, 1);
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn soft_aggregation_is_realizable() {
        let (lm, _) = make_soft_aggregation_mdp(12, 2, 3, 0.9, 5).unwrap();
        assert!(lm.is_soft_aggregation());
        let (_, xi_hat) = fit_linear_model(lm.mdp(), lm.features()).unwrap();
        assert!(xi_hat <= 1e-10, "xi_hat = {xi_hat:e}");
    }

    #[test]
    fn rank_one_aggregation_has_identical_rows() {
        let (lm, _) = make_soft_aggregation_mdp(8, 2, 1, 0.9, 2).unwrap();
        let first = lm.mdp().transition_row(0, 0).to_vec();
        for s in 0..8 {
            for a in 0..2 {
                assert_eq!(lm.mdp().transition_row(s, a), &first[..]);
            }
        }
    }

    #[test]
    fn full_rank_identity_aggregation_recovers_tabular_kernel() {
        // K = S with phi(s, a) = 1_s realizes an arbitrary chain over states.
        let s = 6;
        let a = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut psi = vec![0.0; s * s];
        for row in 0..s {
            simplex_draw(&mut rng, s, &mut psi[row * s..(row + 1) * s]);
        }
        let mut values = vec![0.0; s * a * s];
        for st in 0..s {
            for act in 0..a {
                values[(st * a + act) * s + st] = 1.0;
            }
        }
        let features = FeatureMap::new_stochastic(s, values).unwrap();
        let rewards = vec![0.5; s * a];
        let lm = LinearMdp::from_factors(features, psi.clone(), rewards, s, a, 0.9).unwrap();
        for st in 0..s {
            for act in 0..a {
                assert_eq!(lm.mdp().transition_row(st, act), &psi[st * s..(st + 1) * s]);
            }
        }
    }

    #[test]
    fn perturbation_identities() {
        let (lm, _) = make_random_linear_mdp(10, 2, 4, 0.9, 21, true).unwrap();
        let same = perturb_kernel(&lm, 0.0, 99).unwrap();
        assert_eq!(same.transitions(), lm.mdp().transitions());

        let xi = 0.05;
        let noisy = perturb_kernel(&lm, xi, 99).unwrap();
        let (_, xi_hat) = fit_linear_model(&noisy, lm.features()).unwrap();
        assert!(xi_hat <= xi + 1e-10, "xi_hat = {xi_hat}");
    }

    #[test]
    fn lower_bound_feature_count() {
        let inner = make_random_tabular(3, 2, 0.9, 4).unwrap();
        let (lm, anchors, emb) = make_lower_bound_instance(&inner).unwrap();
        assert_eq!(lm.features().n_features(), 3 * 2 + 1);
        assert!(anchors.has_unit_rows());
        assert_eq!(emb.absorbing_state, 3);
        // Absorbing state has optimal value 0.
        let sol = solve_optimal(lm.mdp(), 1e-10).unwrap();
        assert!(sol.v_star[3].abs() <= 1e-10);
    }

    #[test]
    fn lower_bound_restriction_is_optimal() {
        let inner = make_random_tabular(4, 3, 0.85, 17).unwrap();
        let (lm, _, emb) = make_lower_bound_instance(&inner).unwrap();
        let outer_sol = solve_optimal(lm.mdp(), 1e-10).unwrap();
        let inner_sol = solve_optimal(&inner, 1e-10).unwrap();
        let restricted = emb.restrict_policy(&outer_sol.pi_star).unwrap();
        let v = crate::oracle::evaluate_policy(&inner, &restricted, 1e-10).unwrap();
        for (a, b) in v.iter().zip(&inner_sol.v_star) {
            assert!((a - b).abs() <= 1e-9);
        }
        for (a, b) in outer_sol.v_star.iter().take(4).zip(&inner_sol.v_star) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn find_anchors_recovers_planted_units() {
        let (lm, _) = make_random_linear_mdp(12, 3, 4, 0.9, 33, true).unwrap();
        let found = find_anchors(lm.features(), ANCHOR_FEASIBILITY_TOL).unwrap();
        assert_eq!(found.indices(), &[0, 1, 2, 3]);
        assert!(found.is_anchored());
        // With unit anchors the convex weights are the feature rows themselves.
        let w = found.weights().unwrap();
        for (x, y) in w.iter().zip(lm.features().values()) {
            assert!((x - y).abs() <= 1e-7);
        }
    }

    #[test]
    fn degenerate_single_feature_any_row_is_anchor() {
        let features = FeatureMap::new_stochastic(1, vec![1.0; 6]).unwrap();
        let set = find_anchors(&features, ANCHOR_FEASIBILITY_TOL).unwrap();
        assert_eq!(set.indices().len(), 1);
        assert!((set.regularity() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn excess_vertices_reported() {
        // Five rows in the K = 3 simplex forming a quadrilateral plus one
        // interior point: 4 hull vertices exceed K.
        #[rustfmt::skip]
        let values = vec![
            0.8, 0.2, 0.0,
            0.0, 0.8, 0.2,
            0.2, 0.0, 0.8,
            0.34, 0.33, 0.33, // near-center: inside
            0.6, 0.0, 0.4,    // outside the triangle of the first three
        ];
        let features = FeatureMap::new_stochastic(3, values).unwrap();
        match find_anchors(&features, ANCHOR_FEASIBILITY_TOL) {
            Err(CoreError::AnchorsNotFound(v)) => {
                assert_eq!(v.len(), 4, "vertices: {v:?}");
            }
            other => panic!("expected AnchorsNotFound, got {other:?}"),
        }
    }

    #[test]
    fn regularity_of_scaled_identity() {
        // Phi_K = 2I, so phi' Phi_K^{-1} halves every row: the simplex rows
        // contribute 1/2 and the K-set rows themselves contribute exactly 1
        // (the max runs over all evaluated rows, K-set included).
        #[rustfmt::skip]
        let values = vec![
            2.0, 0.0,
            0.0, 2.0,
            0.5, 0.5,
            1.0, 0.0,
        ];
        let features = FeatureMap::new(2, values).unwrap();
        let l = regularity_l(&features, &[0, 1]).unwrap();
        assert!((l - 1.0).abs() <= 1e-12, "L = {l}");
        // Restricted to the non-identity rows the halving is visible.
        let inv = AnchorSet::from_indices(&features, &[0, 1]).unwrap();
        let phi_inv = inv.phi_k_inv();
        let row = features.row(2);
        let l1: f64 = (0..2)
            .map(|c| (row[0] * phi_inv[c] + row[1] * phi_inv[2 + c]).abs())
            .sum();
        assert!((l1 - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn regularity_at_least_one_for_stochastic_blocks() {
        let (lm, _) = make_random_linear_mdp(10, 2, 4, 0.9, 2, false).unwrap();
        let set = representative_set(lm.features()).unwrap();
        assert!(set.regularity() >= 1.0 - 1e-12);
    }

    #[test]
    fn singular_representative_rejected() {
        #[rustfmt::skip]
        let values = vec![
            0.5, 0.5,
            0.5, 0.5,
            1.0, 0.0,
        ];
        let features = FeatureMap::new_stochastic(2, values).unwrap();
        let err = regularity_l(&features, &[0, 1]).unwrap_err();
        assert!(err.to_string().contains("singular"));
    }

    #[test]
    fn anchor_weight_features_have_unit_anchor_rows() {
        let (lm, _) = make_random_linear_mdp(10, 2, 4, 0.9, 8, true).unwrap();
        let found = find_anchors(lm.features(), ANCHOR_FEASIBILITY_TOL).unwrap();
        let lam = anchor_weight_features(lm.features(), &found).unwrap();
        assert!(lam.is_stochastic());
        for (j, &idx) in found.indices().iter().enumerate() {
            let row = lam.row(idx);
            for (c, &x) in row.iter().enumerate() {
                let want = if c == j { 1.0 } else { 0.0 };
                assert!((x - want).abs() <= 1e-7);
            }
        }
    }
}
