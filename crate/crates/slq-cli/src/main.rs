//! `slq` — experiment driver for the stochastic LQ toolkit.
//!
//! Subcommands: `spectrum` (basis diagnostics), `solve`, `simulate`,
//! `verify`, and `run` (the full pipeline). Exit codes: 0 success, 2
//! configuration error, 3 solver error, 4 verification failure.

mod config;
mod orchestrate;
mod report;

use clap::{Args, Parser, Subcommand};
use config::ExperimentConfig;
use orchestrate::{ExitKind, Scope};
use slq_core::spectral::SpectralBasis;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "slq",
    version,
    about = "Stochastic LQ optimal control toolkit: backward Riccati solvers, forward simulation, and Monte Carlo identity verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config value, then $SLQ_OUT_DIR, then
    /// ./slq-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override both the solver and verifier Monte Carlo path counts.
    #[arg(long)]
    paths: Option<usize>,
    /// Override the time-step count.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print eigenbasis diagnostics: eigenvalues, weights, embedding sums.
    Spectrum {
        /// Retained eigenmodes.
        #[arg(long, default_value_t = 16)]
        modes: usize,
        /// Spatial dimension m of the domain (0,1)^m.
        #[arg(long, default_value_t = 1)]
        spatial_dim: usize,
        /// Also write the table as CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the backward Riccati system and dump P-diagnostics.
    Solve(RunArgs),
    /// Solve, then simulate the closed loop and report its cost.
    Simulate(RunArgs),
    /// Solve, then run the configured identity checks.
    Verify(RunArgs),
    /// Full pipeline: solve, simulate, verify, and emit the manifest.
    Run(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Spectrum {
            modes,
            spatial_dim,
            out,
        } => spectrum(modes, spatial_dim, out.as_deref()),
        Command::Solve(args) => run_scoped(&args, Scope::Solve),
        Command::Simulate(args) => run_scoped(&args, Scope::Simulate),
        Command::Verify(args) => run_scoped(&args, Scope::Verify),
        Command::Run(args) => run_scoped(&args, Scope::Run),
    };
    ExitCode::from(code)
}

fn run_scoped(args: &RunArgs, scope: Scope) -> u8 {
    let mut cfg = match ExperimentConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(2, &e.to_string()),
    };
    cfg.apply_overrides(args.seed, args.out.as_deref(), args.paths, args.steps);
    if let Err(e) = cfg.validate() {
        return fail(2, &e.to_string());
    }
    if matches!(scope, Scope::Verify) && cfg.effective_checks().is_empty() {
        return fail(
            2,
            "verify.checks: at least one check is required for the verify command",
        );
    }
    let out_dir = cfg.output_directory();
    let outcome = orchestrate::run_experiment(&cfg, scope, &out_dir);
    match &outcome.exit {
        ExitKind::Success => {
            let checks = outcome.manifest.checks_total;
            if checks > 0 {
                println!(
                    "ok — {}/{checks} checks passed, outputs in {}",
                    outcome.manifest.checks_passed,
                    out_dir.display()
                );
            } else {
                println!("ok — outputs in {}", out_dir.display());
            }
        }
        ExitKind::ConfigError(msg) | ExitKind::SolverError(msg) => {
            eprintln!("error: {msg}");
        }
        ExitKind::VerificationFailed(n) => {
            eprintln!("error: {n} verification check(s) failed; see the emitted reports");
        }
    }
    outcome.exit.code()
}

fn fail(code: u8, msg: &str) -> u8 {
    eprintln!("error: {msg}");
    code
}

fn spectrum(modes: usize, spatial_dim: usize, out: Option<&Path>) -> u8 {
    let basis = match SpectralBasis::dirichlet(spatial_dim, modes) {
        Ok(b) => b,
        Err(e) => return fail(2, &e.to_string()),
    };
    let mut csv = String::from("j,eigenvalue,graph_norm,lambda_weight,hs_partial_sum\n");
    println!(
        "{:>4}  {:>14}  {:>14}  {:>14}  {:>18}",
        "j", "eigenvalue", "graph_norm", "lambda_weight", "hs_partial_sum"
    );
    for j in 0..modes {
        let partial = basis.hs_embedding_partial_sum(j + 1);
        println!(
            "{:>4}  {:>14.6e}  {:>14.6e}  {:>14.6e}  {:>18.12e}",
            j + 1,
            basis.eigenvalues()[j],
            basis.graph_norms()[j],
            basis.lambda_weights()[j],
            partial
        );
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            j + 1,
            basis.eigenvalues()[j],
            basis.graph_norms()[j],
            basis.lambda_weights()[j],
            partial
        ));
    }
    if let Some(path) = out {
        if let Err(e) = std::fs::write(path, csv) {
            return fail(2, &format!("cannot write '{}': {e}", path.display()));
        }
        println!("wrote {}", path.display());
    }
    0
}
