//! `flatdiv train`: ensembles over optimisers, radii and seed sets.

use serde::Serialize;

use flatdiv_core::nn_ensemble::{
    checkpoint, train_ensemble, EnsembleConfig, EnsembleReport, Optimizer, SEVERITIES,
};
use flatdiv_core::numkernel::RngStream;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{fmt_f64, fmt_opt, RunContext};

pub const RUNS_CSV: &str = "train_runs.csv";
pub const SUMMARY_CSV: &str = "train_summary.csv";
pub const METRICS_JSON: &str = "metrics.json";

/// One trained ensemble.
#[derive(Clone, Debug, Serialize)]
pub struct TrainRun {
    pub optimizer: Optimizer,
    pub rho: f64,
    pub ensemble: usize,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<String>,
    pub report: EnsembleReport,
}

/// Per-run scalars, in CSV column order.
fn scalars(r: &EnsembleReport) -> Vec<(String, Option<f64>)> {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut out = vec![
        ("ensemble_accuracy".to_string(), Some(r.ensemble_accuracy)),
        (
            "mean_member_accuracy".to_string(),
            Some(mean(&r.member_accuracy)),
        ),
    ];
    for s in SEVERITIES {
        out.push((format!("ood_accuracy_{s}"), r.ood_accuracy(s)));
    }
    out.extend([
        ("disagreement".to_string(), Some(r.disagreement)),
        ("der".to_string(), r.der),
        ("kl_diversity".to_string(), Some(r.kl_diversity)),
        ("variance_diversity".to_string(), Some(r.variance_diversity)),
        ("eir".to_string(), r.eir),
        ("mean_sharpness".to_string(), Some(r.mean_sharpness)),
        (
            "mean_final_train_loss".to_string(),
            Some(mean(&r.final_train_loss)),
        ),
    ]);
    out
}

fn scalar_names() -> Vec<String> {
    scalars(&EnsembleReport {
        optimizer: Optimizer::Sgd,
        rho: 0.0,
        members: 1,
        final_train_loss: vec![0.0],
        member_accuracy: vec![0.0],
        ensemble_accuracy: 0.0,
        ood: Vec::new(),
        disagreement: 0.0,
        der: None,
        kl_diversity: 0.0,
        variance_diversity: 0.0,
        eir: None,
        member_sharpness: Vec::new(),
        mean_sharpness: 0.0,
    })
    .into_iter()
    .map(|(n, _)| n)
    .collect()
}

/// Mean and sample standard deviation of the present values.
pub fn mean_std(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.len() > 1)
        .then(|| (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(m), sd)
}

fn run_label(opt: Optimizer, rho: f64, e: usize) -> String {
    format!("{}_rho{}_e{e}", opt_name(opt), fmt_f64(rho))
}

fn opt_name(opt: Optimizer) -> &'static str {
    match opt {
        Optimizer::Sgd => "sgd",
        Optimizer::Sam => "sam",
        Optimizer::SharpBalance => "sharpbalance",
    }
}

/// Trains every (optimizer, rho, seed set) combination in that nesting order.
/// `on_run` sees each finished run; the first failure stops the loop and is
/// returned together with the runs completed before it.
pub fn train_all(
    cfg: &ExperimentConfig,
    mut on_run: impl FnMut(&TrainRun, &[flatdiv_core::nn_ensemble::MlpModel]) -> CliResult<Vec<String>>,
) -> (Vec<TrainRun>, CliResult<()>) {
    let t = &cfg.train;
    let data = match t.task.generate() {
        Ok(d) => d,
        Err(e) => return (Vec::new(), Err(CliError::at("train.task", e))),
    };
    let mut runs = Vec::new();
    for opt in t.optimizers() {
        for rho in t.rhos() {
            for (e, seeds) in t.seed_sets(cfg.master_seed).into_iter().enumerate() {
                let ecfg = EnsembleConfig {
                    optimizer: opt,
                    rho,
                    seeds: seeds.clone(),
                    ..t.ensemble.clone()
                };
                let run_stream = RngStream::new(cfg.master_seed, e as u64);
                let trained = match train_ensemble(&data, &ecfg, &run_stream) {
                    Ok(x) => x,
                    Err(err) => {
                        let msg = format!("{}: {err}", run_label(opt, rho, e));
                        return (runs, Err(CliError::Runtime(msg)));
                    }
                };
                log::info!(
                    "{}: accuracy {:.4}, der {:?}, sharpness {:.5}",
                    run_label(opt, rho, e),
                    trained.report.ensemble_accuracy,
                    trained.report.der,
                    trained.report.mean_sharpness
                );
                let mut run = TrainRun {
                    optimizer: opt,
                    rho,
                    ensemble: e,
                    seeds,
                    checkpoints: Vec::new(),
                    report: trained.report,
                };
                match on_run(&run, &trained.members) {
                    Ok(paths) => run.checkpoints = paths,
                    Err(err) => return (runs, Err(err)),
                }
                runs.push(run);
            }
        }
    }
    (runs, Ok(()))
}

pub fn runs_rows(runs: &[TrainRun]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = ["optimizer", "rho", "ensemble", "seeds"]
        .map(String::from)
        .to_vec();
    header.extend(scalar_names());
    let rows = runs
        .iter()
        .map(|r| {
            let mut row = vec![
                opt_name(r.optimizer).to_string(),
                fmt_f64(r.rho),
                r.ensemble.to_string(),
                r.seeds
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(";"),
            ];
            row.extend(scalars(&r.report).into_iter().map(|(_, v)| fmt_opt(v)));
            row
        })
        .collect();
    (header, rows)
}

/// Mean and standard deviation across ensembles for each (optimizer, rho).
pub fn summary_rows(runs: &[TrainRun]) -> (Vec<String>, Vec<Vec<String>>) {
    let names = scalar_names();
    let mut header: Vec<String> = ["optimizer", "rho", "ensembles"].map(String::from).to_vec();
    for n in &names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_std"));
    }
    let mut groups: Vec<(Optimizer, f64, Vec<&TrainRun>)> = Vec::new();
    for r in runs {
        match groups
            .iter_mut()
            .find(|g| g.0 == r.optimizer && g.1.to_bits() == r.rho.to_bits())
        {
            Some(g) => g.2.push(r),
            None => groups.push((r.optimizer, r.rho, vec![r])),
        }
    }
    let rows = groups
        .iter()
        .map(|(opt, rho, members)| {
            let mut row = vec![
                opt_name(*opt).to_string(),
                fmt_f64(*rho),
                members.len().to_string(),
            ];
            let per_run: Vec<Vec<Option<f64>>> = members
                .iter()
                .map(|r| scalars(&r.report).into_iter().map(|(_, v)| v).collect())
                .collect();
            for j in 0..names.len() {
                let col: Vec<Option<f64>> = per_run.iter().map(|v| v[j]).collect();
                let (m, s) = mean_std(&col);
                row.push(fmt_opt(m));
                row.push(fmt_opt(s));
            }
            row
        })
        .collect();
    (header, rows)
}

pub fn run(cfg: &ExperimentConfig, ctx: &mut RunContext) -> CliResult<()> {
    let save = cfg.train.save_checkpoints;
    let (runs, outcome) = train_all(cfg, |run, members| {
        if !save {
            return Ok(Vec::new());
        }
        let mut paths = Vec::new();
        for (i, m) in members.iter().enumerate() {
            let rel = format!(
                "checkpoints/{}/member{i}.ckpt",
                run_label(run.optimizer, run.rho, run.ensemble)
            );
            let path = ctx.path(&rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            checkpoint::save(m, &path)?;
            ctx.register(&rel)?;
            paths.push(rel);
        }
        Ok(paths)
    });

    // Whatever finished is persisted, also when a later run failed.
    let (h, rows) = runs_rows(&runs);
    ctx.write_csv(
        RUNS_CSV,
        &h.iter().map(String::as_str).collect::<Vec<_>>(),
        &rows,
    )?;
    let (h, rows) = summary_rows(&runs);
    ctx.write_csv(
        SUMMARY_CSV,
        &h.iter().map(String::as_str).collect::<Vec<_>>(),
        &rows,
    )?;
    ctx.write_json(METRICS_JSON, &runs)?;

    for r in &runs {
        println!(
            "{} rho={} ensemble={}: accuracy {:.4}, ood3 {:.4}, der {}, sharpness {:.5}",
            opt_name(r.optimizer),
            r.rho,
            r.ensemble,
            r.report.ensemble_accuracy,
            r.report.ood_accuracy(3).unwrap_or(f64::NAN),
            r.report
                .der
                .map_or("undefined".to_string(), |d| format!("{d:.4}")),
            r.report.mean_sharpness
        );
    }
    outcome
}
