use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use linq_cli::commands::{self, CommandOptions};

/// Experiment harness for discounted MDPs with feature-linear transition
/// kernels: generate instances, run the two phased Q-learners against the
/// exact oracle, sweep axes, and audit instance files.
#[derive(Parser)]
#[command(name = "linq", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file plus its cached exact solution.
    Generate(CommonArgs),
    /// Compute (or refresh) the cached exact solution of an instance.
    SolveExact(CommonArgs),
    /// Run seeded trials and write the per-trial CSV and JSON summary.
    Run(CommonArgs),
    /// Run an axis sweep and write the aggregated CSV and JSON summary.
    Sweep(CommonArgs),
    /// Re-validate an instance file (here --spec names the instance JSON).
    Audit(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment spec file (for audit: the instance file).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker pool size; defaults to LINQ_WORKERS, then the CPU count.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the spec's base_seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn into_options(self) -> CommandOptions {
        CommandOptions {
            spec_path: self.spec,
            out_dir: self.out,
            workers: self.workers,
            seed_override: self.seed,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => commands::cmd_generate(&args.into_options()),
        Command::SolveExact(args) => commands::cmd_solve_exact(&args.into_options()),
        Command::Run(args) => commands::cmd_run(&args.into_options()),
        Command::Sweep(args) => commands::cmd_sweep(&args.into_options()),
        Command::Audit(args) => commands::cmd_audit(&args.into_options()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
