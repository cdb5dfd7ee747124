//! Machine-readable outputs: versioned CSV plus a JSON summary mirroring
//! every aggregate. All numeric formatting is shortest-round-trip, so
//! re-runs are byte-comparable (timing fields excepted).

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::runner::{Aggregate, TrialRecord, TrialStatus};
use crate::spec::ExperimentSpec;

pub const CSV_SCHEMA_LINE: &str = "#schema=1";

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn fmt_opt_bool(x: Option<bool>) -> String {
    x.map(|b| b.to_string()).unwrap_or_default()
}

fn fmt_opt_u64(x: Option<u64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Per-trial CSV: one row per trial, ordered by trial index.
pub fn write_trials_csv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{CSV_SCHEMA_LINE}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "trial",
        "seed",
        "status",
        "samples_used",
        "wall_time_ms",
        "policy_error",
        "monotone_ok",
        "underestimate_ok",
        "clip_ok",
        "r_prime",
        "r",
        "m",
        "m1",
        "per_round_n",
    ])
    .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.trial.to_string(),
            r.seed.to_string(),
            match r.status {
                TrialStatus::Ok => "ok".to_string(),
                TrialStatus::Failed => "failed".to_string(),
            },
            r.samples_used.to_string(),
            fmt_f64(r.wall_time_ms),
            fmt_opt_f64(r.policy_error),
            fmt_opt_bool(r.monotone_ok),
            fmt_opt_bool(r.underestimate_ok),
            fmt_opt_bool(r.clip_ok),
            fmt_opt_u64(r.r_prime),
            fmt_opt_u64(r.r),
            fmt_opt_u64(r.m),
            fmt_opt_u64(r.m1),
            fmt_opt_u64(r.per_round_n),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::error::CliError {
    crate::error::CliError::runtime(format!("csv: {e}"))
}

/// Run summary: the spec echoed verbatim, instance provenance, aggregates,
/// and an informational timing block (excluded from reproducibility).
#[derive(Debug, Serialize)]
pub struct RunSummary<'a> {
    pub spec: &'a ExperimentSpec,
    pub instance_sha256: &'a str,
    pub effective_base_seed: u64,
    pub results: &'a Aggregate,
    pub timing: Timing,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub wall_time_ms_total: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// One aggregated sweep row per axis value.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{CSV_SCHEMA_LINE}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "axis",
        "value",
        "trials",
        "failed",
        "median_policy_error",
        "p90_policy_error",
        "success_rate",
        "target_error",
        "samples_per_trial",
        "total_samples",
    ])
    .map_err(csv_err)?;
    for row in rows {
        let a = &row.aggregate;
        let per_trial = if a.trials > 0 {
            a.total_samples / a.trials as u64
        } else {
            0
        };
        w.write_record([
            row.axis.clone(),
            fmt_f64(row.value),
            a.trials.to_string(),
            a.failed.to_string(),
            fmt_opt_f64(a.median_policy_error),
            fmt_opt_f64(a.p90_policy_error),
            fmt_opt_f64(a.success_rate),
            fmt_opt_f64(a.target_error),
            per_trial.to_string(),
            a.total_samples.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SweepSummary<'a> {
    pub spec: &'a ExperimentSpec,
    pub instance_sha256: &'a str,
    pub effective_base_seed: u64,
    pub rows: &'a [SweepRow],
    /// Least-squares slope of ln(median error) against ln(N); present for
    /// sample-budget sweeps with positive medians.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_log_slope: Option<f64>,
    pub timing: Timing,
}
