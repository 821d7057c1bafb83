//! Optimiser steps, sharpness-aware set selection and the mixed-objective epoch.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::mlp::{Dataset, MlpModel};
use crate::error::{Error, Result};
use crate::numkernel::RngStream;

/// Gradients below this norm skip the ascent step.
pub const MIN_PERTURB_NORM: f64 = 1e-12;

/// Two-pass SAM on a flat parameter vector: ascend to `theta + rho g/||g||`,
/// then descend with the gradient found there plus weight decay. Returns the loss at `theta`.
pub fn sam_update<F>(
    params: &mut [f64],
    mut loss_grad: F,
    rho: f64,
    lr: f64,
    weight_decay: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(rho >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rho must be >= 0, got {rho}"
        )));
    }
    let (loss, g) = loss_grad(params)?;
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let step = if rho > 0.0 && gn >= MIN_PERTURB_NORM {
        let probe: Vec<f64> = params
            .iter()
            .zip(&g)
            .map(|(p, gi)| p + rho * gi / gn)
            .collect();
        loss_grad(&probe)?.1
    } else {
        g
    };
    for (p, gi) in params.iter_mut().zip(&step) {
        *p -= lr * (gi + weight_decay * *p);
    }
    if !params.iter().all(|p| p.is_finite()) {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(loss)
}

/// One SAM step of `model` on `batch`. `rho = 0` is plain SGD.
pub fn sam_train_step(
    model: &mut MlpModel,
    data: &Dataset,
    batch: &[usize],
    rho: f64,
    lr: f64,
    weight_decay: f64,
) -> Result<f64> {
    let shape = (model.d_in, model.hidden, model.classes);
    let mut params = model.params().to_vec();
    let loss = sam_update(
        &mut params,
        |p| {
            let m = MlpModel::from_params(shape.0, shape.1, shape.2, p.to_vec())?;
            let b = m.forward_backward(data, batch, false)?;
            Ok((b.loss, b.grad))
        },
        rho,
        lr,
        weight_decay,
    )?;
    model.params_mut().copy_from_slice(&params);
    Ok(loss)
}

/// Per-member split of the training indices into SAM and normal parts.
#[derive(Clone, Debug, PartialEq)]
pub struct SharpnessAwareSets {
    /// `sam[i]` is `D_SAM^i`, sorted ascending.
    pub sam: Vec<Vec<usize>>,
    /// `normal[i]` is the complement of `sam[i]`, sorted ascending.
    pub normal: Vec<Vec<usize>>,
}

impl SharpnessAwareSets {
    /// Every member trains normally on everything.
    pub fn all_normal(members: usize, n: usize) -> Self {
        Self {
            sam: vec![Vec::new(); members],
            normal: vec![(0..n).collect(); members],
        }
    }

    /// Checks that each member's two sets partition `0..n`.
    pub fn is_partition(&self, n: usize) -> bool {
        self.sam.iter().zip(&self.normal).all(|(s, o)| {
            let mut seen = vec![0u8; n];
            for &i in s.iter().chain(o) {
                if i >= n {
                    return false;
                }
                seen[i] += 1;
            }
            seen.iter().all(|&c| c == 1)
        })
    }
}

/// Number of samples kept per member, `ceil(k_frac n)`.
pub fn top_count(k_frac: f64, n: usize) -> usize {
    ((k_frac * n as f64).ceil() as usize).min(n)
}

/// Indices of the `k` largest scores, ties to the lower index, returned sorted ascending.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut top: Vec<usize> = idx.into_iter().take(k).collect();
    top.sort_unstable();
    top
}

/// `D_SAM^i` is the union of the other members' top-`k_frac` samples by per-sample Fisher trace.
pub fn select_sharpness_aware_sets(
    ensemble: &[MlpModel],
    data: &Dataset,
    k_frac: f64,
) -> Result<SharpnessAwareSets> {
    if ensemble.len() < 2 {
        return Err(Error::InvalidArgument(
            "set selection needs at least two members".into(),
        ));
    }
    let n = data.len();
    let all: Vec<usize> = (0..n).collect();
    let k = top_count(k_frac, n);
    let tops: Vec<Vec<usize>> = ensemble
        .par_iter()
        .map(|m| Ok(top_k_indices(&m.per_sample_fisher(data, &all)?, k)))
        .collect::<Result<_>>()?;
    Ok(sets_from_tops(&tops, n))
}

/// Builds the per-member sets from each member's own top indices.
pub fn sets_from_tops(tops: &[Vec<usize>], n: usize) -> SharpnessAwareSets {
    let m = tops.len();
    let mut sam = Vec::with_capacity(m);
    let mut normal = Vec::with_capacity(m);
    for i in 0..m {
        let mut mark = vec![false; n];
        for (j, t) in tops.iter().enumerate() {
            if j != i {
                t.iter().for_each(|&s| mark[s] = true);
            }
        }
        sam.push((0..n).filter(|&s| mark[s]).collect());
        normal.push((0..n).filter(|&s| !mark[s]).collect());
    }
    SharpnessAwareSets { sam, normal }
}

/// Minibatch order for one epoch: each set is shuffled and chunked, and the two
/// batch streams are interleaved in proportion to their lengths. `true` marks a SAM batch.
pub fn epoch_schedule(
    sam: &[usize],
    normal: &[usize],
    batch_size: usize,
    stream: &RngStream,
) -> Vec<(bool, Vec<usize>)> {
    let mut rng = stream.rng();
    let mut a = sam.to_vec();
    let mut b = normal.to_vec();
    a.shuffle(&mut rng);
    b.shuffle(&mut rng);
    let bs = batch_size.max(1);
    let sa: Vec<Vec<usize>> = a.chunks(bs).map(|c| c.to_vec()).collect();
    let sb: Vec<Vec<usize>> = b.chunks(bs).map(|c| c.to_vec()).collect();
    let (na, nb) = (sa.len(), sb.len());
    let mut out = Vec::with_capacity(na + nb);
    let (mut ia, mut ib) = (0, 0);
    while ia < na || ib < nb {
        // pick the stream that is furthest behind; ties go to SAM
        let take_a = ib >= nb || (ia < na && ia * nb <= ib * na);
        if take_a {
            out.push((true, sa[ia].clone()));
            ia += 1;
        } else {
            out.push((false, sb[ib].clone()));
            ib += 1;
        }
    }
    out
}

/// Mean loss and batch counts of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub sam_batches: usize,
    pub normal_batches: usize,
}

/// One pass over `sam` (SAM steps) and `normal` (SGD steps) with shared lr and weight decay.
#[allow(clippy::too_many_arguments)]
pub fn sharpbalance_epoch(
    model: &mut MlpModel,
    data: &Dataset,
    sam: &[usize],
    normal: &[usize],
    rho: f64,
    lr: f64,
    weight_decay: f64,
    batch_size: usize,
    stream: &RngStream,
) -> Result<EpochStats> {
    if sam.is_empty() && !normal.is_empty() {
        log::debug!("no sharpness-aware samples this epoch");
    }
    if normal.is_empty() && !sam.is_empty() {
        log::debug!("no normal samples this epoch");
    }
    let schedule = epoch_schedule(sam, normal, batch_size, stream);
    let mut stats = EpochStats {
        mean_loss: 0.0,
        sam_batches: 0,
        normal_batches: 0,
    };
    let mut seen = 0usize;
    for (is_sam, batch) in &schedule {
        let r = if *is_sam { rho } else { 0.0 };
        let loss = sam_train_step(model, data, batch, r, lr, weight_decay)?;
        stats.mean_loss += loss * batch.len() as f64;
        seen += batch.len();
        if *is_sam {
            stats.sam_batches += 1;
        } else {
            stats.normal_batches += 1;
        }
    }
    if seen > 0 {
        stats.mean_loss /= seen as f64;
    }
    Ok(stats)
}
