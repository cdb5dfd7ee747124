//! Parameter sets for the learned Q-functions and their decoders.
//!
//! A single weight vector `w` decodes through
//! `Q_w(s,a) = r(s,a) + gamma * phi(s,a)' w`; the stacked form keeps a whole
//! collection of weight vectors and decodes through the max over all of them,
//! which is what makes the value estimates monotone under appends.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::mdp::{DiscountedMdp, FeatureMap};

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The single-vector parameter of the basic learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicParams {
    w: Vec<f64>,
}

impl BasicParams {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(CoreError::invalid("parameter vector must be nonempty"));
        }
        if let Some(bad) = w.iter().find(|x| !x.is_finite()) {
            return Err(CoreError::invalid(format!(
                "non-finite parameter entry {bad}"
            )));
        }
        Ok(Self { w })
    }

    pub fn zeros(k: usize) -> Self {
        Self { w: vec![0.0; k] }
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }
}

/// One weight vector of a stacked parameter set, annotated with the
/// (outer, inner) iteration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedEntry {
    pub outer: u32,
    pub inner: u32,
    pub w: Vec<f64>,
}

/// The stacked parameter set `theta = {w^(h)}`: an append-only, ordered
/// collection of weight vectors. Appending never removes entries, so the
/// decoded value function is pointwise nondecreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedParams {
    entries: Vec<StackedEntry>,
}

impl StackedParams {
    /// The initial parameter set holding a single zero vector.
    pub fn single_zero(k: usize) -> Self {
        Self {
            entries: vec![StackedEntry {
                outer: 0,
                inner: 0,
                w: vec![0.0; k],
            }],
        }
    }

    pub fn from_entries(entries: Vec<StackedEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(CoreError::invalid("stacked parameter set must be nonempty"));
        }
        let k = entries[0].w.len();
        for e in &entries {
            if e.w.len() != k {
                return Err(CoreError::invalid("stacked entries must share one length"));
            }
            if let Some(bad) = e.w.iter().find(|x| !x.is_finite()) {
                return Err(CoreError::invalid(format!(
                    "non-finite parameter entry {bad}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn push(&mut self, outer: u32, inner: u32, w: Vec<f64>) {
        debug_assert_eq!(w.len(), self.n_features());
        self.entries.push(StackedEntry { outer, inner, w });
    }

    /// Realized Z, the number of stored vectors.
    #[inline]
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.entries[0].w.len()
    }

    pub fn entries(&self) -> &[StackedEntry] {
        &self.entries
    }
}

/// Decodes `(V_w(s), pi_w(s))` for one state; ties broken by the lowest
/// action index.
pub fn decode_basic(
    mdp: &DiscountedMdp,
    features: &FeatureMap,
    params: &BasicParams,
    state: usize,
) -> (f64, usize) {
    decode_basic_parts(
        mdp.rewards(),
        mdp.discount(),
        mdp.n_actions(),
        features,
        params.as_slice(),
        state,
    )
}

/// `decode_basic` from raw parts; this is what the learners use, since they
/// see only rewards, features and the discount, never the kernel.
pub fn decode_basic_parts(
    rewards: &[f64],
    discount: f64,
    n_actions: usize,
    features: &FeatureMap,
    w: &[f64],
    state: usize,
) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut best_a = 0usize;
    for a in 0..n_actions {
        let row = state * n_actions + a;
        let q = rewards[row] + discount * dot(features.row(row), w);
        if q > best {
            best = q;
            best_a = a;
        }
    }
    (best, best_a)
}

/// Decodes `(V_theta(s), pi_theta(s))`, the double max over stored vectors
/// and actions; ties broken by (lowest entry index, lowest action index).
pub fn decode_stacked(
    mdp: &DiscountedMdp,
    features: &FeatureMap,
    theta: &StackedParams,
    state: usize,
) -> Result<(f64, usize)> {
    decode_stacked_parts(
        mdp.rewards(),
        mdp.discount(),
        mdp.n_actions(),
        features,
        theta,
        state,
    )
}

pub fn decode_stacked_parts(
    rewards: &[f64],
    discount: f64,
    n_actions: usize,
    features: &FeatureMap,
    theta: &StackedParams,
    state: usize,
) -> Result<(f64, usize)> {
    if theta.is_empty() {
        return Err(CoreError::invalid("stacked parameter set is empty"));
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_a = 0usize;
    for entry in theta.entries() {
        for a in 0..n_actions {
            let row = state * n_actions + a;
            let q = rewards[row] + discount * dot(features.row(row), &entry.w);
            if q > best {
                best = q;
                best_a = a;
            }
        }
    }
    Ok((best, best_a))
}

/// The decoded state-value table of a stacked parameter set, memoized over
/// all states so that repeated lookups during sampling are O(1).
///
/// `append_max` folds one more weight vector into the table in
/// O(S * A * K); the result is identical to re-decoding from scratch.
#[derive(Debug, Clone)]
pub struct ValueTable {
    values: Vec<f64>,
}

impl ValueTable {
    pub fn from_theta(
        rewards: &[f64],
        discount: f64,
        n_states: usize,
        n_actions: usize,
        features: &FeatureMap,
        theta: &StackedParams,
    ) -> Result<Self> {
        if theta.is_empty() {
            return Err(CoreError::invalid("stacked parameter set is empty"));
        }
        let mut table = Self {
            values: vec![f64::NEG_INFINITY; n_states],
        };
        for entry in theta.entries() {
            table.append_max(rewards, discount, n_states, n_actions, features, &entry.w);
        }
        Ok(table)
    }

    /// Value table of a single weight vector.
    pub fn from_basic(
        rewards: &[f64],
        discount: f64,
        n_states: usize,
        n_actions: usize,
        features: &FeatureMap,
        w: &[f64],
    ) -> Self {
        let mut table = Self {
            values: vec![f64::NEG_INFINITY; n_states],
        };
        table.append_max(rewards, discount, n_states, n_actions, features, w);
        table
    }

    pub fn append_max(
        &mut self,
        rewards: &[f64],
        discount: f64,
        n_states: usize,
        n_actions: usize,
        features: &FeatureMap,
        w: &[f64],
    ) {
        debug_assert_eq!(self.values.len(), n_states);
        for s in 0..n_states {
            let mut best = self.values[s];
            for a in 0..n_actions {
                let row = s * n_actions + a;
                let q = rewards[row] + discount * dot(features.row(row), w);
                if q > best {
                    best = q;
                }
            }
            self.values[s] = best;
        }
    }

    #[inline]
    pub fn get(&self, state: usize) -> f64 {
        self.values[state]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}
