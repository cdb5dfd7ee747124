//! Sweep orchestration: cross product of one axis against the trial count,
//! one aggregated row per axis point.

use linq_core::instances::perturb_kernel;
use linq_core::oracle::solve_optimal;

use crate::error::{CliError, Result};
use crate::instance_io::{self, ResolvedInstance};
use crate::report::SweepRow;
use crate::runner::{aggregate, run_trials, TrialContext};
use crate::spec::{AlgorithmSpec, ExperimentSpec, InstanceSource, SweepAxis};

/// Runs the sweep described by `spec.sweep`, returning one row per value.
pub fn run_sweep(
    pool: &rayon::ThreadPool,
    spec: &ExperimentSpec,
    base: &ResolvedInstance,
    base_seed: u64,
) -> Result<Vec<SweepRow>> {
    let sweep = spec
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::validation("spec has no sweep section"))?;
    let algorithm = spec
        .algorithm
        .as_ref()
        .ok_or_else(|| CliError::validation("sweep requires an algorithm"))?;
    let mut rows = Vec::with_capacity(sweep.values.len());
    for &value in &sweep.values {
        let records = match sweep.axis {
            SweepAxis::N => {
                let algo = match algorithm {
                    AlgorithmSpec::Ppq {
                        rounds_coefficient,
                        solve_tolerance,
                        ..
                    } => AlgorithmSpec::Ppq {
                        total_samples: value as u64,
                        rounds_coefficient: *rounds_coefficient,
                        solve_tolerance: *solve_tolerance,
                    },
                    _ => return Err(CliError::validation("axis 'n' requires ppq")),
                };
                run_point(pool, spec, base, &algo, base_seed)?
            }
            SweepAxis::Epsilon => {
                let algo = match algorithm {
                    AlgorithmSpec::Oppq {
                        delta, constants, ..
                    } => AlgorithmSpec::Oppq {
                        epsilon: value,
                        delta: *delta,
                        constants: *constants,
                    },
                    _ => return Err(CliError::validation("axis 'epsilon' requires oppq")),
                };
                run_point(pool, spec, base, &algo, base_seed)?
            }
            SweepAxis::Gamma => {
                let generator = match &spec.instance {
                    InstanceSource::Generator(g) => g.with_discount(value),
                    InstanceSource::Path { .. } => {
                        return Err(CliError::validation(
                            "axis 'gamma' requires a generated instance",
                        ))
                    }
                };
                let mut point_spec = spec.clone();
                point_spec.instance = InstanceSource::Generator(generator);
                let resolved = instance_io::resolve(&point_spec)?;
                run_point(pool, &point_spec, &resolved, algorithm, base_seed)?
            }
            SweepAxis::Xi => {
                let mut point_spec = spec.clone();
                point_spec.xi = Some(value);
                run_point(pool, &point_spec, base, algorithm, base_seed)?
            }
        };
        let agg = aggregate(&records, spec.effective_target());
        rows.push(SweepRow {
            axis: sweep.axis.label().to_string(),
            value,
            aggregate: agg,
        });
    }
    Ok(rows)
}

/// One sweep point: applies the spec's perturbation (if any), solves the
/// effective environment, and runs the trials.
fn run_point(
    pool: &rayon::ThreadPool,
    spec: &ExperimentSpec,
    resolved: &ResolvedInstance,
    algorithm: &AlgorithmSpec,
    base_seed: u64,
) -> Result<Vec<crate::runner::TrialRecord>> {
    // The perturbation seed is the instance seed: the same noise directions
    // across xi values, scaled by the mixture weight.
    let mdp_eff = match spec.xi {
        Some(xi) if xi > 0.0 => perturb_kernel(&resolved.lm, xi, resolved.file.metadata.seed)?,
        _ => resolved.lm.mdp().clone(),
    };
    let solution = solve_optimal(&mdp_eff, spec.oracle_tolerance)?;
    let ctx = TrialContext {
        mdp: &mdp_eff,
        features: resolved.lm.features(),
        anchors: &resolved.anchors,
        solution: &solution,
        oracle_tolerance: spec.oracle_tolerance,
        algorithm,
    };
    Ok(run_trials(pool, &ctx, spec.trials, base_seed))
}

/// Least-squares slope of ln(median) vs ln(value); `None` unless every
/// median is positive and there are at least two points.
pub fn log_log_slope(rows: &[SweepRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            r.aggregate
                .median_policy_error
                .filter(|&m| m > 0.0)
                .map(|m| (r.value.ln(), m.ln()))
        })
        .collect();
    if pts.len() != rows.len() || pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}
