use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flatdiv::{Command, Overrides};

/// Sharpness/diversity experiments for flat ensembles.
#[derive(Parser)]
#[command(name = "flatdiv", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analytic sharpness/diversity curves for SAM and SharpBalance.
    TheoryCurve(RunArgs),
    /// Monte-Carlo check of the closed forms; exit code 3 if any cell fails.
    Verify(RunArgs),
    /// Train ensembles and evaluate every metric.
    Train(RunArgs),
    /// Recompute metrics from stored checkpoints.
    Measure(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.ensemble.rho=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Named configuration applied before the file and overrides.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, args) = match cli.command {
        Cmd::TheoryCurve(a) => (Command::TheoryCurve, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Measure(a) => (Command::Measure, a),
    };
    let ov = Overrides {
        config: args.config,
        sets: args.sets,
        preset: args.preset,
        seed: args.seed,
        out: args.out,
    };
    let outcome = flatdiv::run(command, &ov);
    if let Err(e) = &outcome.result {
        eprintln!("flatdiv {}: {e}", command.name());
    }
    if outcome.manifest.is_some() {
        eprintln!("outputs in {}", outcome.output_dir.display());
    }
    ExitCode::from(outcome.exit_code() as u8)
}
