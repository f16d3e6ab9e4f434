use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gramlimit::config::{parse_with_overrides, Command as RunCommand};
use gramlimit::runner::run_experiment;

#[derive(Parser)]
#[command(
    name = "gramlimit",
    version,
    about = "Limiting spectra of Gram matrices with stationary rows"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override a config entry, e.g. `--set solver.tol=1e-11`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (default: $GRAMLIMIT_OUTPUT_ROOT/<command>-<hash>).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the limit equation and invert it to a density.
    Solve(RunArgs),
    /// Generate data matrices and their Gram spectra.
    Simulate(RunArgs),
    /// Compare simulated spectra with the limit across sizes.
    Compare(RunArgs),
    /// Toeplitz spectra against the pushforward law.
    Toeplitz(RunArgs),
    /// Non-Gaussian against Gaussian rows with the same covariance.
    Universality(RunArgs),
    /// Limits of truncated densities along a ladder.
    Truncation(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Cmd::Solve(a) => (RunCommand::Solve, a),
        Cmd::Simulate(a) => (RunCommand::Simulate, a),
        Cmd::Compare(a) => (RunCommand::Compare, a),
        Cmd::Toeplitz(a) => (RunCommand::Toeplitz, a),
        Cmd::Universality(a) => (RunCommand::Universality, a),
        Cmd::Truncation(a) => (RunCommand::Truncation, a),
    };
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut overrides = vec![format!("command=\"{}\"", kind.name())];
    overrides.extend(args.overrides);
    let mut config = match parse_with_overrides(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(w) = args.workers {
        config.workers = w;
    }
    match run_experiment(&config, args.output.as_deref()) {
        Ok(outcome) => {
            let m = &outcome.manifest;
            for c in &m.checks {
                println!(
                    "{} {}: {:.6e} (threshold {:.6e})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                );
            }
            println!("output: {}", outcome.output_dir.display());
            if let Some(f) = &m.failure {
                eprintln!("error in stage {}: {}", f.stage, f.message);
                return ExitCode::from(2);
            }
            if m.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
