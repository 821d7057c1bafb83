//! `flatdiv measure`: metrics recomputed from stored checkpoints.

use std::path::{Path, PathBuf};

use serde_json::json;

use flatdiv_core::metrics::{
    self, adaptive_sharpness, MetricReport, PredictionSet, SharpnessQuery,
};
use flatdiv_core::nn_ensemble::{checkpoint, ensemble_accuracy, BoundModel, MlpModel};
use flatdiv_core::numkernel::RngStream;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const JSON: &str = "measure.json";

/// Expands directories into their `*.ckpt` files, sorted by name.
pub fn checkpoint_files(entries: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in entries {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "ckpt"))
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(CliError::at(
                    "measure.checkpoints",
                    format!("no .ckpt files in {}", p.display()),
                ));
            }
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load(path: &Path) -> CliResult<MlpModel> {
    checkpoint::load(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn compute(cfg: &ExperimentConfig) -> CliResult<Vec<MetricReport>> {
    let m = &cfg.measure;
    let files = checkpoint_files(&m.checkpoints)?;
    let models: Vec<MlpModel> = files.iter().map(|f| load(f)).collect::<CliResult<_>>()?;
    for (f, model) in files.iter().zip(&models) {
        if model.d_in != m.task.d_in || model.classes != m.task.classes {
            return Err(CliError::at(
                "measure.task",
                format!(
                    "{} has d_in={} classes={}, task has d_in={} classes={}",
                    f.display(),
                    model.d_in,
                    model.classes,
                    m.task.d_in,
                    m.task.classes
                ),
            ));
        }
    }
    let data = m
        .task
        .generate()
        .map_err(|e| CliError::at("measure.task", e))?;
    let seed = cfg.master_seed;
    let base = RngStream::new(seed, 0);
    let mut reports = Vec::new();

    for (i, (f, model)) in files.iter().zip(&models).enumerate() {
        let file = f.to_string_lossy().to_string();
        for &norm in &m.norms {
            let query = SharpnessQuery {
                norm,
                ..m.sharpness.clone()
            };
            let mut bound = BoundModel {
                model: model.clone(),
                data: &data.train,
            };
            // Same batches for every norm of a member.
            let out = adaptive_sharpness(&mut bound, &query, &base.derive(i as u64))?;
            reports.push(MetricReport {
                metric: format!(
                    "sharpness_{}",
                    serde_json::to_value(norm).unwrap().as_str().unwrap()
                ),
                value: out.value,
                config: json!({
                    "member": i,
                    "checkpoint": file,
                    "split": "train",
                    "query": query,
                    "batches_used": out.batches_used,
                    "aborted": out.aborted,
                }),
                seed,
                member_count: 1,
                sample_count: out.batches_used * query.batch_size,
            });
        }
        reports.push(MetricReport {
            metric: "accuracy".into(),
            value: model.accuracy(&data.test),
            config: json!({ "member": i, "checkpoint": file, "split": "test" }),
            seed,
            member_count: 1,
            sample_count: data.test.len(),
        });
    }

    if models.len() >= 2 {
        let preds = PredictionSet::new(
            models.iter().map(|md| md.predict_all(&data.test)).collect(),
            data.test.y.clone(),
        )?;
        let acc = ensemble_accuracy(&models, &data.test, m.combine);
        let member_err = preds.member_errors();
        let mut push =
            |name: &str, v: f64| reports.push(MetricReport::for_predictions(name, v, &preds, seed));
        push("ensemble_accuracy", acc);
        push("disagreement", metrics::mean_disagreement(&preds)?);
        push("kl_diversity", metrics::kl_diversity(&preds)?);
        push("variance_diversity", metrics::variance_diversity(&preds)?);
        match metrics::der(&preds) {
            Ok(v) => push("der", v),
            Err(e) => log::warn!("der skipped: {e}"),
        }
        match metrics::eir(&member_err, 1.0 - acc) {
            Ok(v) => push("eir", v),
            Err(e) => log::warn!("eir skipped: {e}"),
        }
        for (sev, ds) in &data.ood {
            reports.push(MetricReport {
                metric: "ood_ensemble_accuracy".into(),
                value: ensemble_accuracy(&models, ds, m.combine),
                config: json!({ "severity": sev, "combine": m.combine }),
                seed,
                member_count: models.len(),
                sample_count: ds.len(),
            });
        }
    }
    Ok(reports)
}

pub fn run(cfg: &ExperimentConfig, ctx: &mut crate::output::RunContext) -> CliResult<()> {
    let reports = compute(cfg)?;
    ctx.write_json(JSON, &reports)?;
    for r in &reports {
        let tag = ["member", "severity"]
            .iter()
            .find_map(|k| r.config.get(*k).map(|v| format!("[{k} {v}]")))
            .unwrap_or_default();
        println!("{}{tag} = {}", r.metric, r.value);
    }
    Ok(())
}
