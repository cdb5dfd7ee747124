//! The five harness commands. Everything returns through `CliError`, whose
//! variant fixes the process exit code (validation 2, runtime 3).

use std::path::PathBuf;
use std::time::Instant;

use crate::error::{CliError, Result};
use crate::instance_io::{self, instance_json, solve_cached};
use crate::report::{self, RunSummary, SweepSummary, Timing};
use crate::runner::{aggregate, run_trials, TrialContext};
use crate::spec::ExperimentSpec;
use crate::sweep::{log_log_slope, run_sweep};

pub struct CommandOptions {
    pub spec_path: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed_override: Option<u64>,
}

impl CommandOptions {
    /// Output directory: the --out flag, then the spec's `output` field.
    fn ensure_out(&self, spec: &ExperimentSpec) -> Result<PathBuf> {
        let dir = self
            .out_dir
            .clone()
            .or_else(|| spec.output.clone())
            .ok_or_else(|| {
                CliError::validation("an output directory is required: pass --out or set 'output' in the spec")
            })?;
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    pub fn resolve_workers(&self) -> usize {
        resolve_workers(self.workers)
    }
}

/// Worker count: flag, then LINQ_WORKERS, then available parallelism.
pub fn resolve_workers(flag: Option<usize>) -> usize {
    flag.filter(|&w| w > 0)
        .or_else(|| {
            std::env::var("LINQ_WORKERS")
                .ok()
                .and_then(|v| v.parse::<usize>().ok())
                .filter(|&w| w > 0)
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::runtime(format!("worker pool: {e}")))
}

fn load_spec(opts: &CommandOptions) -> Result<ExperimentSpec> {
    let spec = ExperimentSpec::load(&opts.spec_path)?;
    Ok(spec)
}

fn effective_base_seed(spec: &ExperimentSpec, opts: &CommandOptions) -> u64 {
    opts.seed_override.unwrap_or(spec.base_seed)
}

/// Writes the instance JSON and its cached exact solution. Idempotent:
/// identical specs produce byte-identical files.
pub fn cmd_generate(opts: &CommandOptions) -> Result<()> {
    let spec = load_spec(opts)?;
    let out = opts.ensure_out(&spec)?;
    let resolved = instance_io::resolve(&spec)?;
    let text = instance_json(&resolved.file)?;
    let instance_path = instance_io::instance_path(&out, &spec.name);
    std::fs::write(&instance_path, text)?;
    let solution_path = instance_io::solution_path(&out, &spec.name);
    solve_cached(&resolved, spec.oracle_tolerance, Some(&solution_path))?;
    println!(
        "generated {} (S = {}, A = {}, K = {}, sha256 = {})",
        instance_path.display(),
        resolved.file.n_states,
        resolved.file.n_actions,
        resolved.lm.features().n_features(),
        resolved.sha256,
    );
    Ok(())
}

/// Computes (or refreshes) the cached exact solution for an instance.
pub fn cmd_solve_exact(opts: &CommandOptions) -> Result<()> {
    let spec = load_spec(opts)?;
    let out = opts.ensure_out(&spec)?;
    let resolved = instance_io::resolve(&spec)?;
    let solution_path = instance_io::solution_path(&out, &spec.name);
    let solution = solve_cached(&resolved, spec.oracle_tolerance, Some(&solution_path))?;
    println!(
        "solved {} to residual {:.3e}; cached at {}",
        spec.name,
        solution.residual,
        solution_path.display()
    );
    Ok(())
}

/// Runs the configured trials and writes the per-trial CSV plus the JSON
/// summary.
pub fn cmd_run(opts: &CommandOptions) -> Result<()> {
    let start = Instant::now();
    let spec = load_spec(opts)?;
    let algorithm = spec
        .algorithm
        .clone()
        .ok_or_else(|| CliError::validation("run requires an algorithm section"))?;
    let out = opts.ensure_out(&spec)?;
    let base_seed = effective_base_seed(&spec, opts);
    let pool = build_pool(opts.resolve_workers())?;
    let resolved = instance_io::resolve(&spec)?;

    let mdp_eff = match spec.xi {
        Some(xi) if xi > 0.0 => {
            linq_core::instances::perturb_kernel(&resolved.lm, xi, resolved.file.metadata.seed)?
        }
        _ => resolved.lm.mdp().clone(),
    };
    let solution = if spec.xi.unwrap_or(0.0) > 0.0 {
        // Perturbed environments are solved fresh; the cache keys the
        // unperturbed instance.
        linq_core::oracle::solve_optimal(&mdp_eff, spec.oracle_tolerance)?
    } else {
        solve_cached(&resolved, spec.oracle_tolerance, None)?
    };

    let ctx = TrialContext {
        mdp: &mdp_eff,
        features: resolved.lm.features(),
        anchors: &resolved.anchors,
        solution: &solution,
        oracle_tolerance: spec.oracle_tolerance,
        algorithm: &algorithm,
    };
    let records = run_trials(&pool, &ctx, spec.trials, base_seed);
    let agg = aggregate(&records, spec.effective_target());

    let csv_path = out.join(format!("{}.trials.csv", spec.name));
    report::write_trials_csv(&csv_path, &records)?;
    let summary = RunSummary {
        spec: &spec,
        instance_sha256: &resolved.sha256,
        effective_base_seed: base_seed,
        results: &agg,
        timing: Timing {
            wall_time_ms_total: start.elapsed().as_secs_f64() * 1e3,
        },
    };
    let json_path = out.join(format!("{}.summary.json", spec.name));
    report::write_json(&json_path, &summary)?;
    println!(
        "ran {} trials of {}: median policy error {}, outputs in {}",
        agg.trials,
        algorithm.name(),
        agg.median_policy_error
            .map(|m| format!("{m:.6}"))
            .unwrap_or("n/a".into()),
        out.display()
    );
    if agg.failed > 0 {
        println!("warning: {} trial(s) failed; see the CSV", agg.failed);
    }
    Ok(())
}

/// Runs the axis sweep and writes the aggregated CSV plus the JSON mirror.
pub fn cmd_sweep(opts: &CommandOptions) -> Result<()> {
    let start = Instant::now();
    let spec = load_spec(opts)?;
    if spec.sweep.is_none() {
        return Err(CliError::validation(
            "sweep requires a sweep section in the spec",
        ));
    }
    let out = opts.ensure_out(&spec)?;
    let base_seed = effective_base_seed(&spec, opts);
    let pool = build_pool(opts.resolve_workers())?;
    let resolved = instance_io::resolve(&spec)?;
    let rows = run_sweep(&pool, &spec, &resolved, base_seed)?;
    let slope = match spec.sweep.as_ref().map(|s| s.axis) {
        Some(crate::spec::SweepAxis::N) => log_log_slope(&rows),
        _ => None,
    };

    let csv_path = out.join(format!("{}.sweep.csv", spec.name));
    report::write_sweep_csv(&csv_path, &rows)?;
    let summary = SweepSummary {
        spec: &spec,
        instance_sha256: &resolved.sha256,
        effective_base_seed: base_seed,
        rows: &rows,
        log_log_slope: slope,
        timing: Timing {
            wall_time_ms_total: start.elapsed().as_secs_f64() * 1e3,
        },
    };
    let json_path = out.join(format!("{}.sweep.json", spec.name));
    report::write_json(&json_path, &summary)?;
    println!(
        "swept {} over {} point(s){}; outputs in {}",
        spec.name,
        rows.len(),
        slope
            .map(|s| format!(", fitted log-log slope {s:.4}"))
            .unwrap_or_default(),
        out.display()
    );
    Ok(())
}

/// Re-validates an instance file: parses, re-derives the kernel from the
/// factors, checks every model invariant, and reports provenance.
pub fn cmd_audit(opts: &CommandOptions) -> Result<()> {
    let path = &opts.spec_path;
    let (lm, file) = instance_io::load_instance(path)?;
    let text = std::fs::read_to_string(path)?;
    let sha = instance_io::sha256_hex(text.as_bytes());
    let anchors = instance_io::derive_anchors(&lm)?;
    println!(
        "audit ok: {} (generator = {}, seed = {}, S = {}, A = {}, K = {}, stochastic = {}, \
         anchored = {}, L = {}, sha256 = {sha})",
        file.metadata.name,
        file.metadata.generator,
        file.metadata.seed,
        file.n_states,
        file.n_actions,
        lm.features().n_features(),
        lm.features().is_stochastic(),
        anchors.is_anchored(),
        anchors.regularity(),
    );
    Ok(())
}
