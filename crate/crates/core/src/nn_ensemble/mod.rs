//! Toy ensembles of small MLPs trained with SGD, SAM or SharpBalance on a
//! synthetic blob task, plus their evaluation.

pub mod checkpoint;
mod mlp;
mod task;
mod train;

pub use mlp::{softmax, BatchGrad, BoundModel, Dataset, MlpModel};
pub use task::{SyntheticTask, TaskData, SEVERITIES};
pub use train::{
    epoch_schedule, sam_train_step, sam_update, select_sharpness_aware_sets, sets_from_tops,
    sharpbalance_epoch, top_count, top_k_indices, EpochStats, SharpnessAwareSets, MIN_PERTURB_NORM,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, adaptive_sharpness, PredictionSet, SharpnessQuery};
use crate::numkernel::RngStream;

/// Training losses above this abort the run.
pub const DIVERGENCE_LOSS: f64 = 1e6;

const TAG_INIT: u64 = 1;
const TAG_EPOCH: u64 = 2;
const TAG_SHARPNESS: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Sam,
    SharpBalance,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "sam" => Ok(Self::Sam),
            "sharpbalance" => Ok(Self::SharpBalance),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay to zero over the run.
    Cosine,
}

/// How member outputs are combined into the ensemble prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    Probabilities,
    Logits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: usize,
    pub optimizer: Optimizer,
    pub rho: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub k_frac: f64,
    /// Epochs between recomputations of the sharpness-aware sets.
    pub t_d: usize,
    /// One seed per member; empty derives member streams from the run stream.
    pub seeds: Vec<u64>,
    pub combine: Combine,
    pub sharpness: SharpnessQuery,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 3,
            hidden: 64,
            optimizer: Optimizer::Sgd,
            rho: 0.2,
            weight_decay: 5e-4,
            lr: 0.05,
            lr_schedule: LrSchedule::Cosine,
            epochs: 50,
            batch_size: 32,
            k_frac: 0.4,
            t_d: 10,
            seeds: Vec::new(),
            combine: Combine::Probabilities,
            sharpness: SharpnessQuery::default(),
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.members < 2 {
            return bad("an ensemble needs at least two members");
        }
        if !(self.k_frac > 0.0 && self.k_frac < 1.0) {
            return bad("k_frac must lie in (0, 1)");
        }
        if self.t_d == 0 {
            return bad("t_d must be at least 1");
        }
        if self.hidden == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("hidden, batch_size and epochs must be positive");
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return bad("rho must be >= 0");
        }
        if !(self.lr.is_finite() && self.lr > 0.0)
            || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0)
        {
            return bad("lr must be > 0 and weight_decay >= 0");
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.members {
            return Err(Error::InvalidArgument(format!(
                "{} seeds given for {} members",
                self.seeds.len(),
                self.members
            )));
        }
        self.sharpness.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let t = epoch as f64 / self.epochs as f64;
                self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    fn member_stream(&self, i: usize, run: &RngStream) -> RngStream {
        match self.seeds.get(i) {
            Some(&s) => RngStream::new(s, 0),
            None => run.derive(i as u64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OodResult {
    pub severity: u32,
    pub ensemble_accuracy: f64,
    pub mean_member_accuracy: f64,
}

/// Evaluation of a trained ensemble.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub optimizer: Optimizer,
    pub rho: f64,
    pub members: usize,
    pub final_train_loss: Vec<f64>,
    pub member_accuracy: Vec<f64>,
    pub ensemble_accuracy: f64,
    pub ood: Vec<OodResult>,
    pub disagreement: f64,
    /// `None` when every member is error-free on the test set.
    pub der: Option<f64>,
    pub kl_diversity: f64,
    pub variance_diversity: f64,
    pub eir: Option<f64>,
    pub member_sharpness: Vec<f64>,
    pub mean_sharpness: f64,
}

impl EnsembleReport {
    pub fn ood_accuracy(&self, severity: u32) -> Option<f64> {
        self.ood
            .iter()
            .find(|o| o.severity == severity)
            .map(|o| o.ensemble_accuracy)
    }
}

#[derive(Clone, Debug)]
pub struct TrainedEnsemble {
    pub members: Vec<MlpModel>,
    pub report: EnsembleReport,
}

/// Trains every member and evaluates the ensemble.
///
/// SharpBalance runs its first epoch with plain SGD, then reselects the
/// sharpness-aware sets every `t_d` epochs.
pub fn train_ensemble(
    task: &TaskData,
    cfg: &EnsembleConfig,
    run: &RngStream,
) -> Result<TrainedEnsemble> {
    cfg.validate()?;
    let train = &task.train;
    let n = train.len();
    let d = train.d_in;
    let classes = task
        .train
        .y
        .iter()
        .chain(&task.test.y)
        .max()
        .map_or(2, |&y| y + 1)
        .max(2);
    let streams: Vec<RngStream> = (0..cfg.members)
        .map(|i| cfg.member_stream(i, run))
        .collect();
    let mut members: Vec<MlpModel> = streams
        .iter()
        .map(|s| MlpModel::init(d, cfg.hidden, classes, &s.derive(TAG_INIT)))
        .collect();
    let all: Vec<usize> = (0..n).collect();
    let mut sets = SharpnessAwareSets::all_normal(cfg.members, n);
    let mut last_loss = vec![f64::NAN; cfg.members];

    for epoch in 0..cfg.epochs {
        if cfg.optimizer == Optimizer::SharpBalance && epoch >= 1 && (epoch - 1) % cfg.t_d == 0 {
            sets = select_sharpness_aware_sets(&members, train, cfg.k_frac)?;
            log::debug!(
                "epoch {epoch}: sharpness-aware set sizes {:?}",
                sets.sam.iter().map(Vec::len).collect::<Vec<_>>()
            );
        }
        let lr = cfg.lr_at(epoch);
        let stats: Vec<EpochStats> = members
            .par_iter_mut()
            .enumerate()
            .map(|(i, m)| {
                let es = streams[i].derive(TAG_EPOCH).derive(epoch as u64);
                let (sam, normal): (&[usize], &[usize]) = match cfg.optimizer {
                    Optimizer::Sgd => (&[], &all),
                    Optimizer::Sam => (&all, &[]),
                    Optimizer::SharpBalance => (&sets.sam[i], &sets.normal[i]),
                };
                sharpbalance_epoch(
                    m,
                    train,
                    sam,
                    normal,
                    cfg.rho,
                    lr,
                    cfg.weight_decay,
                    cfg.batch_size,
                    &es,
                )
            })
            .collect::<Result<_>>()?;
        for (i, s) in stats.iter().enumerate() {
            if !s.mean_loss.is_finite() || s.mean_loss > DIVERGENCE_LOSS {
                return Err(Error::Diverged(format!(
                    "member {i} epoch {epoch}: mean loss {} (lr {lr}, rho {})",
                    s.mean_loss, cfg.rho
                )));
            }
            last_loss[i] = s.mean_loss;
        }
        log::trace!("epoch {epoch}: losses {last_loss:?}");
    }

    let report = evaluate(&members, task, cfg, &streams, last_loss)?;
    Ok(TrainedEnsemble { members, report })
}

/// Accuracy of the combined prediction; 0 on an empty set.
pub fn ensemble_accuracy(members: &[MlpModel], data: &Dataset, combine: Combine) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = (0..data.len())
        .filter(|&i| {
            let x = data.input(i);
            let mut acc = vec![0.0; members[0].classes];
            for m in members {
                let v = match combine {
                    Combine::Probabilities => m.predict_proba(x),
                    Combine::Logits => m.logits(x),
                };
                acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
            metrics::argmax(&acc) == data.y[i]
        })
        .count();
    hits as f64 / data.len() as f64
}

/// Held-out metrics, OOD accuracy per severity and adaptive sharpness per member.
pub fn evaluate(
    members: &[MlpModel],
    task: &TaskData,
    cfg: &EnsembleConfig,
    streams: &[RngStream],
    final_train_loss: Vec<f64>,
) -> Result<EnsembleReport> {
    let preds = PredictionSet::new(
        members.iter().map(|m| m.predict_all(&task.test)).collect(),
        task.test.y.clone(),
    )?;
    let member_accuracy: Vec<f64> = members.iter().map(|m| m.accuracy(&task.test)).collect();
    let ens_acc = ensemble_accuracy(members, &task.test, cfg.combine);
    let member_err: Vec<f64> = member_accuracy.iter().map(|a| 1.0 - a).collect();
    let ood = task
        .ood
        .iter()
        .map(|(s, ds)| OodResult {
            severity: *s,
            ensemble_accuracy: ensemble_accuracy(members, ds, cfg.combine),
            mean_member_accuracy: members.iter().map(|m| m.accuracy(ds)).sum::<f64>()
                / members.len() as f64,
        })
        .collect();
    let member_sharpness: Vec<f64> = members
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let mut bound = BoundModel {
                model: m.clone(),
                data: &task.train,
            };
            adaptive_sharpness(
                &mut bound,
                &cfg.sharpness,
                &streams[i].derive(TAG_SHARPNESS),
            )
            .map(|o| o.value)
        })
        .collect::<Result<_>>()?;
    let mean_sharpness = member_sharpness.iter().sum::<f64>() / member_sharpness.len() as f64;
    Ok(EnsembleReport {
        optimizer: cfg.optimizer,
        rho: cfg.rho,
        members: members.len(),
        final_train_loss,
        ensemble_accuracy: ens_acc,
        ood,
        disagreement: metrics::mean_disagreement(&preds)?,
        der: metrics::der(&preds).ok(),
        kl_diversity: metrics::kl_diversity(&preds)?,
        variance_diversity: metrics::variance_diversity(&preds)?,
        eir: metrics::eir(&member_err, 1.0 - ens_acc).ok(),
        member_accuracy,
        member_sharpness,
        mean_sharpness,
    })
}
