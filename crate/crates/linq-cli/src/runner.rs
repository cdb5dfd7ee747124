//! Trial execution: seeded runs of a configured learner against one
//! instance, scored by the exact oracle, with invariant flags and a
//! closed-form budget audit per trial.

use std::panic::AssertUnwindSafe;
use std::time::Instant;

use linq_core::instances::AnchorSet;
use linq_core::mdp::{DiscountedMdp, FeatureMap};
use linq_core::oppq::{monotonicity_audit_with, oppq_learn, OppqConfig};
use linq_core::oracle::{policy_error_with_solution, ExactSolution};
use linq_core::params::{decode_basic_parts, decode_stacked_parts, ValueTable};
use linq_core::ppq::{ppq_learn, PpqConfig};
use linq_core::sampling::GenerativeModel;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::spec::AlgorithmSpec;

/// One seeded run. `wall_time_ms` is informational and excluded from the
/// reproducibility contract; everything else is bit-deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub status: TrialStatus,
    pub samples_used: u64,
    pub wall_time_ms: f64,
    pub policy_error: Option<f64>,
    pub monotone_ok: Option<bool>,
    pub underestimate_ok: Option<bool>,
    pub clip_ok: Option<bool>,
    /// Realized configuration: outer rounds (oppq only).
    pub r_prime: Option<u64>,
    /// Rounds (both learners).
    pub r: Option<u64>,
    /// Outer batch (oppq only).
    pub m: Option<u64>,
    /// Inner batch (oppq only).
    pub m1: Option<u64>,
    /// Per-round batch (ppq only).
    pub per_round_n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

/// Everything a trial needs, shared across the worker pool.
pub struct TrialContext<'a> {
    /// The environment the sampler draws from (possibly perturbed).
    pub mdp: &'a DiscountedMdp,
    /// Features the learner sees (the linear reference model's).
    pub features: &'a FeatureMap,
    pub anchors: &'a AnchorSet,
    pub solution: &'a ExactSolution,
    pub oracle_tolerance: f64,
    pub algorithm: &'a AlgorithmSpec,
}

pub fn run_trial(ctx: &TrialContext<'_>, trial: usize, seed: u64) -> TrialRecord {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| execute(ctx, seed)));
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    match outcome {
        Ok(Ok(mut record)) => {
            record.trial = trial;
            record.seed = seed;
            record.wall_time_ms = wall_time_ms;
            record
        }
        Ok(Err(e)) => failed_record(trial, seed, wall_time_ms, e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            failed_record(trial, seed, wall_time_ms, format!("panic: {msg}"))
        }
    }
}

fn failed_record(trial: usize, seed: u64, wall_time_ms: f64, msg: String) -> TrialRecord {
    TrialRecord {
        trial,
        seed,
        status: TrialStatus::Failed,
        samples_used: 0,
        wall_time_ms,
        policy_error: None,
        monotone_ok: None,
        underestimate_ok: None,
        clip_ok: None,
        r_prime: None,
        r: None,
        m: None,
        m1: None,
        per_round_n: None,
        error_message: Some(msg),
    }
}

fn execute(ctx: &TrialContext<'_>, seed: u64) -> Result<TrialRecord> {
    let mdp = ctx.mdp;
    let n_states = mdp.n_states();
    let n_actions = mdp.n_actions();
    let mut gm = GenerativeModel::new(mdp, seed);
    match ctx.algorithm {
        AlgorithmSpec::Ppq {
            total_samples,
            rounds_coefficient,
            solve_tolerance,
        } => {
            let cfg = PpqConfig {
                total_samples: *total_samples,
                rounds_coefficient: *rounds_coefficient,
                solve_tolerance: *solve_tolerance,
                representative: ctx.anchors.clone(),
            };
            let run = ppq_learn(&mut gm, ctx.features, mdp.rewards(), mdp.discount(), &cfg)?;
            let expected = run.rounds as u64 * ctx.anchors.n_features() as u64 * run.per_round;
            audit_budget(gm.sample_count(), expected)?;
            let policy: Vec<usize> = (0..n_states)
                .map(|s| {
                    decode_basic_parts(
                        mdp.rewards(),
                        mdp.discount(),
                        n_actions,
                        ctx.features,
                        run.params.as_slice(),
                        s,
                    )
                    .1
                })
                .collect();
            let err = policy_error_with_solution(mdp, &policy, ctx.solution, ctx.oracle_tolerance)?;
            Ok(TrialRecord {
                trial: 0,
                seed,
                status: TrialStatus::Ok,
                samples_used: gm.sample_count(),
                wall_time_ms: 0.0,
                policy_error: Some(err),
                monotone_ok: None,
                underestimate_ok: None,
                clip_ok: Some(run.clip_ok),
                r_prime: None,
                r: Some(run.rounds as u64),
                m: None,
                m1: None,
                per_round_n: Some(run.per_round),
                error_message: None,
            })
        }
        AlgorithmSpec::Oppq {
            epsilon,
            delta,
            constants,
        } => {
            let cfg = OppqConfig {
                epsilon: *epsilon,
                delta: *delta,
                anchors: ctx.anchors.clone(),
                constants: *constants,
            };
            let run = oppq_learn(&mut gm, ctx.features, mdp.rewards(), mdp.discount(), &cfg)?;
            let expected = run.schedule.total_samples(ctx.anchors.n_features());
            audit_budget(gm.sample_count(), expected)?;
            let policy: Vec<usize> = (0..n_states)
                .map(|s| {
                    decode_stacked_parts(
                        mdp.rewards(),
                        mdp.discount(),
                        n_actions,
                        ctx.features,
                        &run.theta,
                        s,
                    )
                    .map(|(_, a)| a)
                })
                .collect::<linq_core::Result<_>>()?;
            let err = policy_error_with_solution(mdp, &policy, ctx.solution, ctx.oracle_tolerance)?;
            let report = monotonicity_audit_with(
                mdp,
                ctx.features,
                &run.theta,
                ctx.solution,
                ctx.oracle_tolerance,
            )?;
            let table = ValueTable::from_theta(
                mdp.rewards(),
                mdp.discount(),
                n_states,
                n_actions,
                ctx.features,
                &run.theta,
            )?;
            let over = (0..n_states)
                .map(|s| table.get(s) - ctx.solution.v_star[s])
                .fold(f64::NEG_INFINITY, f64::max);
            let horizon = mdp.horizon();
            let clip_ok = run
                .theta
                .entries()
                .iter()
                .all(|e| e.w.iter().all(|&x| (0.0..=horizon).contains(&x)));
            Ok(TrialRecord {
                trial: 0,
                seed,
                status: TrialStatus::Ok,
                samples_used: gm.sample_count(),
                wall_time_ms: 0.0,
                policy_error: Some(err),
                monotone_ok: Some(report.holds),
                underestimate_ok: Some(over <= ctx.oracle_tolerance),
                clip_ok: Some(clip_ok),
                r_prime: Some(run.schedule.outer_rounds as u64),
                r: Some(run.schedule.inner_rounds as u64),
                m: Some(run.schedule.outer_batch),
                m1: Some(run.schedule.inner_batch),
                per_round_n: None,
                error_message: None,
            })
        }
    }
}

fn audit_budget(actual: u64, expected: u64) -> Result<()> {
    if actual != expected {
        return Err(CliError::runtime(format!(
            "budget audit failed: sampler reports {actual}, closed form gives {expected}"
        )));
    }
    Ok(())
}

/// Runs `trials` seeded trials on the pool; output order is by trial index.
pub fn run_trials(
    pool: &rayon::ThreadPool,
    ctx: &TrialContext<'_>,
    trials: usize,
    base_seed: u64,
) -> Vec<TrialRecord> {
    use rayon::prelude::*;
    pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| run_trial(ctx, t, base_seed + t as u64))
            .collect()
    })
}

/// Deterministic order statistics used by the summaries.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Nearest-rank 90th percentile.
pub fn p90(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((0.9 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub failed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_policy_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p90_policy_error: Option<f64>,
    /// Fraction of all trials (failures included in the denominator) with
    /// policy error at most the target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_error: Option<f64>,
    pub total_samples: u64,
    pub monotone_failures: usize,
}

pub fn aggregate(records: &[TrialRecord], target: Option<f64>) -> Aggregate {
    let errors: Vec<f64> = records.iter().filter_map(|r| r.policy_error).collect();
    let failed = records
        .iter()
        .filter(|r| r.status == TrialStatus::Failed)
        .count();
    let success_rate = target.map(|t| {
        let ok = records
            .iter()
            .filter(|r| r.status == TrialStatus::Ok && r.policy_error.is_some_and(|e| e <= t))
            .count();
        ok as f64 / records.len() as f64
    });
    let monotone_failures = records
        .iter()
        .filter(|r| r.monotone_ok == Some(false) || r.status == TrialStatus::Failed)
        .count();
    Aggregate {
        trials: records.len(),
        failed,
        median_policy_error: median(&errors),
        p90_policy_error: p90(&errors),
        success_rate,
        target_error: target,
        total_samples: records.iter().map(|r| r.samples_used).sum(),
        monotone_failures,
    }
}
