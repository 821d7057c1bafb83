//! Diversity and sharpness measures over ensemble predictions and
//! differentiable models.

mod sharpness;

pub use sharpness::{
    adaptive_sharpness, fisher_trace, Differentiable, SharpnessNorm, SharpnessOutcome,
    SharpnessQuery,
};

use serde::Serialize;

use crate::error::{Error, Result};

/// Row-sum tolerance for probability vectors.
pub const PROB_TOL: f64 = 1e-6;
/// Floor applied to probabilities before taking logs.
pub const KL_FLOOR: f64 = 1e-12;

/// Softmax outputs of `m` members on `n` labelled samples with `c` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    m: usize,
    n: usize,
    c: usize,
    /// `probs[(member * n + sample) * c + class]`
    probs: Vec<f64>,
    labels: Vec<usize>,
}

impl PredictionSet {
    /// `outputs[member][sample][class]`.
    pub fn new(outputs: Vec<Vec<Vec<f64>>>, labels: Vec<usize>) -> Result<Self> {
        let m = outputs.len();
        if m == 0 {
            return Err(Error::InvalidArgument(
                "prediction set has no members".into(),
            ));
        }
        let n = labels.len();
        let c = outputs[0].first().map_or(0, |r| r.len());
        if c < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {c}"
            )));
        }
        let mut probs = Vec::with_capacity(m * n * c);
        for (i, member) in outputs.iter().enumerate() {
            if member.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "member {i} has {} samples, labels have {n}",
                    member.len()
                )));
            }
            for (j, row) in member.iter().enumerate() {
                if row.len() != c {
                    return Err(Error::InvalidArgument(format!(
                        "member {i} sample {j}: {} classes, expected {c}",
                        row.len()
                    )));
                }
                let sum: f64 = row.iter().sum();
                if !row.iter().all(|p| p.is_finite() && *p >= 0.0) || (sum - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "member {i} sample {j} is not a probability vector (sum {sum})"
                    )));
                }
                probs.extend_from_slice(row);
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        Ok(Self {
            m,
            n,
            c,
            probs,
            labels,
        })
    }

    pub fn members(&self) -> usize {
        self.m
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.c
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, member: usize, sample: usize) -> &[f64] {
        let o = (member * self.n + sample) * self.c;
        &self.probs[o..o + self.c]
    }

    /// Top-1 class of each sample for one member.
    pub fn predictions(&self, member: usize) -> Vec<usize> {
        (0..self.n).map(|j| argmax(self.row(member, j))).collect()
    }

    /// Top-1 error rate of each member.
    pub fn member_errors(&self) -> Vec<f64> {
        (0..self.m)
            .map(|i| error_rate(&self.predictions(i), &self.labels))
            .collect()
    }

    /// Averaged class probabilities of the ensemble.
    pub fn ensemble_probs(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|j| {
                let mut avg = vec![0.0; self.c];
                for i in 0..self.m {
                    for (a, p) in avg.iter_mut().zip(self.row(i, j)) {
                        *a += p;
                    }
                }
                avg.iter_mut().for_each(|a| *a /= self.m as f64);
                avg
            })
            .collect()
    }

    /// Top-1 error of the probability-averaged ensemble.
    pub fn ensemble_error(&self) -> f64 {
        let preds: Vec<usize> = self.ensemble_probs().iter().map(|p| argmax(p)).collect();
        error_rate(&preds, &self.labels)
    }

    fn require_pairs(&self, what: &str) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!(
                "{what} needs at least 2 members, got {}",
                self.m
            )));
        }
        Ok(())
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn error_rate(preds: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let wrong = preds.iter().zip(labels).filter(|(p, y)| p != y).count();
    wrong as f64 / labels.len() as f64
}

/// Across-member population variance, averaged over classes then samples.
pub fn variance_diversity(preds: &PredictionSet) -> Result<f64> {
    preds.require_pairs("variance_diversity")?;
    let (m, n, c) = (preds.m as f64, preds.n, preds.c);
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for j in 0..n {
        let mut per_sample = 0.0;
        for k in 0..c {
            // shifted by member 0 so identical members give exactly zero
            let first = preds.row(0, j)[k];
            let mean = (0..preds.m)
                .map(|i| preds.row(i, j)[k] - first)
                .sum::<f64>()
                / m;
            per_sample += (0..preds.m)
                .map(|i| (preds.row(i, j)[k] - first - mean).powi(2))
                .sum::<f64>()
                / m;
        }
        total += per_sample / c as f64;
    }
    Ok(total / n as f64)
}

/// Fraction of samples whose top-1 classes differ.
pub fn disagreement(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "disagreement on {} vs {} samples",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64)
}

/// Mean disagreement over unordered member pairs.
pub fn mean_disagreement(preds: &PredictionSet) -> Result<f64> {
    preds.require_pairs("disagreement")?;
    let top: Vec<Vec<usize>> = (0..preds.m).map(|i| preds.predictions(i)).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..preds.m {
        for j in i + 1..preds.m {
            sum += disagreement(&top[i], &top[j])?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Disagreement-error ratio: mean pairwise disagreement over mean member error.
pub fn der(preds: &PredictionSet) -> Result<f64> {
    let dis = mean_disagreement(preds)?;
    let errs = preds.member_errors();
    let mean_err = errs.iter().sum::<f64>() / errs.len() as f64;
    if mean_err <= 0.0 {
        return Err(Error::DerUndefined);
    }
    Ok(dis / mean_err)
}

/// `KL(f_i || f_j)` averaged over ordered pairs `i != j` and samples.
pub fn kl_diversity(preds: &PredictionSet) -> Result<f64> {
    preds.require_pairs("kl_diversity")?;
    if preds.n == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..preds.m {
        for j in 0..preds.m {
            if i == j {
                continue;
            }
            for s in 0..preds.n {
                sum += kl(preds.row(i, s), preds.row(j, s));
            }
        }
    }
    Ok(sum / (preds.m * (preds.m - 1) * preds.n) as f64)
}

/// `sum_k p_k ln(p_k / q_k)` with both sides floored at `KL_FLOOR`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pk, &qk)| {
            let pk = pk.max(KL_FLOOR);
            let qk = qk.max(KL_FLOOR);
            pk * (pk / qk).ln()
        })
        .sum()
}

/// Relative improvement of the ensemble over its average member.
pub fn eir(member_errors: &[f64], ensemble_error: f64) -> Result<f64> {
    if member_errors.is_empty() {
        return Err(Error::EirUndefined);
    }
    let mean = member_errors.iter().sum::<f64>() / member_errors.len() as f64;
    if mean <= 0.0 {
        return Err(Error::EirUndefined);
    }
    Ok((mean - ensemble_error) / mean)
}

/// JSON record of one metric evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub config: serde_json::Value,
    pub seed: u64,
    pub member_count: usize,
    pub sample_count: usize,
}

impl MetricReport {
    pub fn for_predictions(metric: &str, value: f64, preds: &PredictionSet, seed: u64) -> Self {
        let config = match metric {
            "variance_diversity" => serde_json::json!({ "variance": "population" }),
            "kl_diversity" => serde_json::json!({ "pairs": "ordered", "floor": KL_FLOOR }),
            "der" | "disagreement" => {
                serde_json::json!({ "pairs": "unordered", "ties": "lowest_index" })
            }
            _ => serde_json::Value::Null,
        };
        Self {
            metric: metric.to_string(),
            value,
            config,
            seed,
            member_count: preds.members(),
            sample_count: preds.samples(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}
