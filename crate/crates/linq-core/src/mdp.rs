//! Core data model: tabular discounted MDPs, state-action feature maps, and
//! the feature-linear factorization of the transition kernel.
//!
//! Conventions used throughout the crate:
//! - states are `0..S`, actions are `0..A`, and the pair `(s, a)` maps to the
//!   dense row index `s * A + a`;
//! - matrices are row-major `Vec<f64>`;
//! - all arithmetic is `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Tolerance on transition-row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance on the `P = Phi * Psi` factorization residual.
pub const FACTORIZATION_TOL: f64 = 1e-10;

/// Dense row index of a state-action pair.
#[inline]
pub fn pair_index(state: usize, action: usize, n_actions: usize) -> usize {
    state * n_actions + action
}

/// A finite discounted MDP `(S, A, P, r, gamma)` with rewards in `[0, 1]`.
///
/// Immutable after construction; all invariants are checked by [`DiscountedMdp::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedMdp {
    n_states: usize,
    n_actions: usize,
    /// `S*A` rewards, row-major over `(s, a)`.
    rewards: Vec<f64>,
    /// `(S*A) x S` transition probabilities, row-major.
    transitions: Vec<f64>,
    discount: f64,
}

impl DiscountedMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        rewards: Vec<f64>,
        transitions: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(CoreError::invalid(
                "n_states and n_actions must be positive",
            ));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(CoreError::invalid(format!(
                "discount must lie in (0, 1), got {discount}"
            )));
        }
        let pairs = n_states * n_actions;
        if rewards.len() != pairs {
            return Err(CoreError::invalid(format!(
                "rewards has length {}, expected S*A = {}",
                rewards.len(),
                pairs
            )));
        }
        if transitions.len() != pairs * n_states {
            return Err(CoreError::invalid(format!(
                "transitions has length {}, expected (S*A)*S = {}",
                transitions.len(),
                pairs * n_states
            )));
        }
        for (i, &r) in rewards.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) {
                return Err(CoreError::invalid(format!(
                    "reward at pair {i} is {r}, outside [0, 1]"
                )));
            }
        }
        for row in 0..pairs {
            let slice = &transitions[row * n_states..(row + 1) * n_states];
            let mut sum = 0.0;
            for &p in slice {
                if !(p >= 0.0) {
                    return Err(CoreError::invalid(format!(
                        "transition row {row} has a negative or NaN entry: {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(CoreError::invalid(format!(
                    "transition row {row} sums to {sum}, not 1 within {ROW_SUM_TOL:e}"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            rewards,
            transitions,
            discount,
        })
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    #[inline]
    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// The effective horizon `1 / (1 - gamma)`; values live in `[0, horizon]`.
    #[inline]
    pub fn horizon(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }

    #[inline]
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[pair_index(state, action, self.n_actions)]
    }

    #[inline]
    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    #[inline]
    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let row = pair_index(state, action, self.n_actions);
        &self.transitions[row * self.n_states..(row + 1) * self.n_states]
    }

    #[inline]
    pub fn transition_row_by_index(&self, row: usize) -> &[f64] {
        &self.transitions[row * self.n_states..(row + 1) * self.n_states]
    }

    #[inline]
    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    /// Checks that a policy maps every state to a valid action.
    pub fn validate_policy(&self, policy: &[usize]) -> Result<()> {
        if policy.len() != self.n_states {
            return Err(CoreError::invalid(format!(
                "policy has length {}, expected S = {}",
                policy.len(),
                self.n_states
            )));
        }
        for (s, &a) in policy.iter().enumerate() {
            if a >= self.n_actions {
                return Err(CoreError::invalid(format!(
                    "policy picks action {a} at state {s}, but A = {}",
                    self.n_actions
                )));
            }
        }
        Ok(())
    }
}

/// A feature map `phi: S x A -> R^K`, stored as an `(S*A) x K` row-major matrix.
///
/// `stochastic` marks maps whose rows are probability vectors (each entry
/// nonnegative, row sum 1); this is the normalization the anchor-based
/// algorithms rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    n_features: usize,
    n_rows: usize,
    values: Vec<f64>,
    stochastic: bool,
}

impl FeatureMap {
    /// A general (not necessarily stochastic) feature map. Entries must be finite.
    pub fn new(n_features: usize, values: Vec<f64>) -> Result<Self> {
        Self::build(n_features, values, false)
    }

    /// A feature map whose rows are probability vectors; rows are validated.
    pub fn new_stochastic(n_features: usize, values: Vec<f64>) -> Result<Self> {
        let map = Self::build(n_features, values, true)?;
        for row in 0..map.n_rows {
            let slice = map.row(row);
            let mut sum = 0.0;
            for &x in slice {
                if x < 0.0 {
                    return Err(CoreError::invalid(format!(
                        "stochastic feature row {row} has a negative entry: {x}"
                    )));
                }
                sum += x;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(CoreError::invalid(format!(
                    "stochastic feature row {row} sums to {sum}, not 1 within {ROW_SUM_TOL:e}"
                )));
            }
        }
        Ok(map)
    }

    fn build(n_features: usize, values: Vec<f64>, stochastic: bool) -> Result<Self> {
        if n_features == 0 {
            return Err(CoreError::invalid("n_features must be positive"));
        }
        if values.is_empty() || !values.len().is_multiple_of(n_features) {
            return Err(CoreError::invalid(format!(
                "feature matrix length {} is not a positive multiple of K = {}",
                values.len(),
                n_features
            )));
        }
        if let Some(bad) = values.iter().find(|x| !x.is_finite()) {
            return Err(CoreError::invalid(format!(
                "non-finite feature value {bad}"
            )));
        }
        let n_rows = values.len() / n_features;
        Ok(Self {
            n_features,
            n_rows,
            values,
            stochastic,
        })
    }

    /// Re-checks the row normalization and returns a map with the
    /// `stochastic` flag set accordingly. Used when loading instances from
    /// disk, where the flag is not stored.
    pub fn detect_stochastic(self) -> Self {
        let ok = (0..self.n_rows).all(|r| {
            let row = self.row(r);
            row.iter().all(|&x| x >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL
        });
        Self {
            stochastic: ok,
            ..self
        }
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.n_features..(row + 1) * self.n_features]
    }

    #[inline]
    pub fn pair_row(&self, state: usize, action: usize, n_actions: usize) -> &[f64] {
        self.row(pair_index(state, action, n_actions))
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A discounted MDP whose kernel factors as `P = Phi * Psi` with `Phi` the
/// feature matrix and `Psi` a `K x S` matrix of (unknown to the learner)
/// next-state weights.
#[derive(Debug, Clone)]
pub struct LinearMdp {
    mdp: DiscountedMdp,
    features: FeatureMap,
    /// `K x S`, row-major; row `k` is `psi_k`.
    psi: Vec<f64>,
}

impl LinearMdp {
    /// Wraps an existing MDP, verifying the factorization residual
    /// `max |P - Phi*Psi| <= FACTORIZATION_TOL`.
    pub fn from_parts(mdp: DiscountedMdp, features: FeatureMap, psi: Vec<f64>) -> Result<Self> {
        let k = features.n_features();
        let (s, pairs) = (mdp.n_states(), mdp.n_pairs());
        if features.n_rows() != pairs {
            return Err(CoreError::invalid(format!(
                "feature map has {} rows, expected S*A = {}",
                features.n_rows(),
                pairs
            )));
        }
        if psi.len() != k * s {
            return Err(CoreError::invalid(format!(
                "psi has length {}, expected K*S = {}",
                psi.len(),
                k * s
            )));
        }
        let mut worst = 0.0f64;
        for row in 0..pairs {
            let phi = features.row(row);
            let p = mdp.transition_row_by_index(row);
            for s2 in 0..s {
                let mut acc = 0.0;
                for (kk, &f) in phi.iter().enumerate() {
                    acc += f * psi[kk * s + s2];
                }
                worst = worst.max((acc - p[s2]).abs());
            }
        }
        if worst > FACTORIZATION_TOL {
            return Err(CoreError::invalid(format!(
                "factorization residual {worst:e} exceeds {FACTORIZATION_TOL:e}"
            )));
        }
        Ok(Self { mdp, features, psi })
    }

    /// Builds the MDP from its factors, deriving `P = Phi * Psi` and
    /// validating the result as a transition kernel.
    pub fn from_factors(
        features: FeatureMap,
        psi: Vec<f64>,
        rewards: Vec<f64>,
        n_states: usize,
        n_actions: usize,
        discount: f64,
    ) -> Result<Self> {
        let k = features.n_features();
        if psi.len() != k * n_states {
            return Err(CoreError::invalid(format!(
                "psi has length {}, expected K*S = {}",
                psi.len(),
                k * n_states
            )));
        }
        let pairs = n_states * n_actions;
        if features.n_rows() != pairs {
            return Err(CoreError::invalid(format!(
                "feature map has {} rows, expected S*A = {}",
                features.n_rows(),
                pairs
            )));
        }
        let mut transitions = vec![0.0; pairs * n_states];
        for row in 0..pairs {
            let phi = features.row(row);
            let out = &mut transitions[row * n_states..(row + 1) * n_states];
            for (kk, &f) in phi.iter().enumerate() {
                if f == 0.0 {
                    continue;
                }
                let psi_row = &psi[kk * n_states..(kk + 1) * n_states];
                for (o, &p) in out.iter_mut().zip(psi_row) {
                    *o += f * p;
                }
            }
        }
        let mdp = DiscountedMdp::new(n_states, n_actions, rewards, transitions, discount)?;
        Ok(Self { mdp, features, psi })
    }

    #[inline]
    pub fn mdp(&self) -> &DiscountedMdp {
        &self.mdp
    }

    #[inline]
    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    #[inline]
    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    #[inline]
    pub fn psi_row(&self, k: usize) -> &[f64] {
        let s = self.mdp.n_states();
        &self.psi[k * s..(k + 1) * s]
    }

    /// True when both the feature rows and the psi rows are probability
    /// distributions, i.e. the kernel is a soft state aggregation: transition
    /// rows are then stochastic automatically.
    pub fn is_soft_aggregation(&self) -> bool {
        if !self.features.is_stochastic() {
            return false;
        }
        let s = self.mdp.n_states();
        (0..self.features.n_features()).all(|k| {
            let row = &self.psi[k * s..(k + 1) * s];
            row.iter().all(|&x| x >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL
        })
    }

    pub fn into_mdp(self) -> DiscountedMdp {
        self.mdp
    }
}

/// On-disk form of an instance: a single JSON document. Transitions are not
/// stored; they are re-derived from `features * psi` on load and validated.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    /// `S*A` rewards, row-major.
    pub rewards: Vec<f64>,
    /// `K x S` next-state weights, row-major.
    pub psi: Vec<f64>,
    /// `(S*A) x K` feature values, row-major.
    pub features: Vec<f64>,
    pub metadata: InstanceMetadata,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InstanceMetadata {
    pub seed: u64,
    pub generator: String,
    pub name: String,
}

impl InstanceFile {
    pub fn from_linear(lm: &LinearMdp, metadata: InstanceMetadata) -> Self {
        Self {
            n_states: lm.mdp().n_states(),
            n_actions: lm.mdp().n_actions(),
            discount: lm.mdp().discount(),
            rewards: lm.mdp().rewards().to_vec(),
            psi: lm.psi().to_vec(),
            features: lm.features().values().to_vec(),
            metadata,
        }
    }

    /// Rebuilds the instance, re-deriving and validating the kernel.
    pub fn to_linear(&self) -> Result<LinearMdp> {
        let pairs = self.n_states * self.n_actions;
        if pairs == 0 || !self.features.len().is_multiple_of(pairs) {
            return Err(CoreError::invalid(format!(
                "features length {} is not a multiple of S*A = {}",
                self.features.len(),
                pairs
            )));
        }
        let k = self.features.len() / pairs;
        let features = FeatureMap::new(k, self.features.clone())?.detect_stochastic();
        LinearMdp::from_factors(
            features,
            self.psi.clone(),
            self.rewards.clone(),
            self.n_states,
            self.n_actions,
            self.discount,
        )
    }
}
