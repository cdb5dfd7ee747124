//! Basic phased parametric Q-learning over a representative state-action set.
//!
//! Each round draws a fixed batch per representative pair, averages the
//! clipped decoded values of the sampled next states, and maps the resulting
//! K targets back to parameter space through `Phi_K^{-1}`. The learner sees
//! rewards, features, the discount and the sampler; never the kernel.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{CoreError, Result};
use crate::instances::AnchorSet;
use crate::linalg;
use crate::mdp::FeatureMap;
use crate::params::{BasicParams, ValueTable};
use crate::sampling::GenerativeModel;

#[derive(Debug, Clone)]
pub struct PpqConfig {
    /// Total sample budget N.
    pub total_samples: u64,
    /// Coefficient in `R = ceil(c_R ln N / (1 - gamma))`.
    pub rounds_coefficient: f64,
    /// Acceptable residual of the `Phi_K w = Q` solve.
    pub solve_tolerance: f64,
    /// Representative state-action set (Assumption 1); the anchor set of the
    /// instance when one is available.
    pub representative: AnchorSet,
}

impl PpqConfig {
    pub fn new(total_samples: u64, representative: AnchorSet) -> Self {
        Self {
            total_samples,
            rounds_coefficient: 4.0,
            solve_tolerance: 1e-9,
            representative,
        }
    }

    /// `R = ceil(c_R ln N / (1 - gamma))`.
    pub fn rounds(&self, discount: f64) -> usize {
        let r = self.rounds_coefficient * (self.total_samples as f64).ln() / (1.0 - discount);
        ((r - r.abs() * 1e-12 - 1e-12).ceil() as usize).max(1)
    }

    /// Per-round, per-pair batch `floor(N / (K R))`; leftovers are discarded.
    pub fn per_round(&self, discount: f64) -> u64 {
        let k = self.representative.n_features() as u64;
        let r = self.rounds(discount) as u64;
        self.total_samples / (k * r)
    }
}

#[derive(Debug, Clone)]
pub struct PpqRoundTrace {
    pub round: usize,
    /// Sup norm of the parameter vector after the round's solve.
    pub w_norm: f64,
    /// Cumulative draws at the end of the round.
    pub sample_count: u64,
    pub wall_time_ms: f64,
}

#[derive(Debug)]
pub struct PpqRun {
    pub params: BasicParams,
    pub trace: Vec<PpqRoundTrace>,
    pub rounds: usize,
    pub per_round: u64,
    /// True iff every averaged Q target stayed inside `[0, 1/(1-gamma)]`.
    pub clip_ok: bool,
}

pub fn ppq_learn(
    gm: &mut GenerativeModel<'_>,
    features: &FeatureMap,
    rewards: &[f64],
    discount: f64,
    cfg: &PpqConfig,
) -> Result<PpqRun> {
    let n_states = gm.n_states();
    let n_actions = gm.n_actions();
    let pairs = n_states * n_actions;
    if features.n_rows() != pairs || rewards.len() != pairs {
        return Err(CoreError::invalid(
            "features and rewards must cover every (s, a) pair of the sampled model",
        ));
    }
    if !(cfg.rounds_coefficient > 0.0) {
        return Err(CoreError::invalid("rounds coefficient must be positive"));
    }
    if !(cfg.solve_tolerance > 0.0) {
        return Err(CoreError::invalid("solve tolerance must be positive"));
    }
    let k = cfg.representative.n_features();
    if k != features.n_features() {
        return Err(CoreError::invalid(
            "representative set dimension differs from the feature dimension",
        ));
    }
    let rounds = cfg.rounds(discount);
    let per_round = cfg.per_round(discount);
    if per_round == 0 {
        return Err(CoreError::invalid(format!(
            "budget too small for configuration: N = {} gives floor(N / (K R)) = 0 \
             with K = {k}, R = {rounds}",
            cfg.total_samples
        )));
    }
    let horizon = 1.0 / (1.0 - discount);
    let start = Instant::now();

    let phi_k = linalg::from_row_major(k, k, cfg.representative.phi_k());
    let lu = phi_k.clone().lu();

    let mut w = vec![0.0; k];
    // Clipped value table of the current parameters over all states.
    let mut clipped: Vec<f64> = clipped_table(
        features, rewards, discount, n_states, n_actions, &w, horizon,
    );
    let mut counts = vec![0u64; n_states];
    let mut targets = DVector::zeros(k);
    let mut trace = Vec::with_capacity(rounds);
    let mut clip_ok = true;

    for round in 1..=rounds {
        for (j, &row) in cfg.representative.indices().iter().enumerate() {
            let (s, a) = (row / n_actions, row % n_actions);
            gm.sample_histogram(s, a, per_round, &mut counts)?;
            let mut acc = 0.0;
            for (state, &c) in counts.iter().enumerate() {
                if c > 0 {
                    acc += c as f64 * clipped[state];
                }
            }
            let target = acc / per_round as f64;
            if !(0.0..=horizon).contains(&target) {
                clip_ok = false;
            }
            targets[j] = target;
        }
        let solved = lu
            .solve(&targets)
            .ok_or_else(|| CoreError::internal("Phi_K solve failed: singular block"))?;
        let residual = (&phi_k * &solved - &targets).amax();
        if residual > cfg.solve_tolerance {
            return Err(CoreError::internal(format!(
                "Phi_K solve residual {residual:e} exceeds {:e} at round {round}",
                cfg.solve_tolerance
            )));
        }
        w.copy_from_slice(solved.as_slice());
        clipped = clipped_table(
            features, rewards, discount, n_states, n_actions, &w, horizon,
        );
        trace.push(PpqRoundTrace {
            round,
            w_norm: w.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            sample_count: gm.sample_count(),
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    Ok(PpqRun {
        params: BasicParams::new(w)?,
        trace,
        rounds,
        per_round,
        clip_ok,
    })
}

/// `Pi_[0, H](V_w)` over all states.
fn clipped_table(
    features: &FeatureMap,
    rewards: &[f64],
    discount: f64,
    n_states: usize,
    n_actions: usize,
    w: &[f64],
    horizon: f64,
) -> Vec<f64> {
    let table = ValueTable::from_basic(rewards, discount, n_states, n_actions, features, w);
    table
        .into_vec()
        .into_iter()
        .map(|v| v.clamp(0.0, horizon))
        .collect()
}
