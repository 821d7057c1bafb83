//! Experiment harness for the flat-ensemble laboratory.
//!
//! `flatdiv theory-curve|verify|train|measure` resolve a layered TOML
//! configuration (see [`config`]), run inside a worker pool of
//! `parallelism` threads, and write CSV/JSON results, a resolved-config
//! snapshot and a manifest into `output_dir`.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure,
//! 3 verification failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod presets;

use std::path::PathBuf;

pub use config::{resolve, Command, ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
pub use output::RunManifest;

/// Outcome of a complete run.
#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    /// `None` when the configuration was rejected before anything was written.
    pub manifest: Option<RunManifest>,
    pub result: CliResult<()>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.result.as_ref().map_or_else(CliError::exit_code, |_| 0)
    }
}

/// Resolves the configuration, runs `command` and writes the manifest.
pub fn run(command: Command, ov: &Overrides) -> RunOutcome {
    let cfg = match resolve(command, ov) {
        Ok(c) => c,
        Err(e) => {
            return RunOutcome {
                output_dir: ov.out.clone().unwrap_or_default(),
                manifest: None,
                result: Err(e),
            }
        }
    };
    run_resolved(command, &cfg)
}

/// Runs an already resolved configuration.
pub fn run_resolved(command: Command, cfg: &ExperimentConfig) -> RunOutcome {
    let fail = |e: CliError| RunOutcome {
        output_dir: cfg.output_dir.clone(),
        manifest: None,
        result: Err(e),
    };
    if let Err(e) = cfg.validate(command) {
        return fail(e);
    }
    let mut ctx = match output::RunContext::create(cfg, command) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
    {
        Ok(p) => p,
        Err(e) => return fail(CliError::Runtime(format!("worker pool: {e}"))),
    };
    let result = pool.install(|| match command {
        Command::TheoryCurve => commands::theory_curve::run(cfg, &mut ctx),
        Command::Verify => commands::verify::run(cfg, &mut ctx),
        Command::Train => commands::train::run(cfg, &mut ctx),
        Command::Measure => commands::measure::run(cfg, &mut ctx),
    });
    match ctx.finish(&result) {
        Ok(m) => RunOutcome {
            output_dir: cfg.output_dir.clone(),
            manifest: Some(m),
            result,
        },
        Err(e) => fail(e),
    }
}
