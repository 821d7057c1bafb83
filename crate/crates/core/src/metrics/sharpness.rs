//! Adaptive (scale-normalised) sharpness and per-sample Fisher trace.

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::RngStream;

/// A model whose flat parameter vector can be read, written and differentiated
/// through a mean loss over a subset of its training samples.
pub trait Differentiable {
    fn n_params(&self) -> usize;
    fn n_samples(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]);
    /// Mean loss over `samples` and its gradient.
    fn loss_grad(&self, samples: &[usize]) -> (f64, Vec<f64>);

    fn loss(&self, samples: &[usize]) -> f64 {
        self.loss_grad(samples).0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharpnessNorm {
    L2Adaptive,
    LinfAdaptive,
    AverageCase,
}

impl std::str::FromStr for SharpnessNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2_adaptive" | "l2" => Ok(Self::L2Adaptive),
            "linf_adaptive" | "linf" => Ok(Self::LinfAdaptive),
            "average_case" | "average" => Ok(Self::AverageCase),
            other => Err(Error::InvalidArgument(format!(
                "unknown sharpness norm {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpnessQuery {
    pub rho0: f64,
    pub norm: SharpnessNorm,
    pub n_batches: usize,
    pub batch_size: usize,
    pub ascent_steps: usize,
    /// Defaults to `rho0 / 10` when absent.
    pub ascent_step_size: Option<f64>,
    pub mc_samples: usize,
}

impl Default for SharpnessQuery {
    fn default() -> Self {
        Self {
            rho0: 0.5,
            norm: SharpnessNorm::L2Adaptive,
            n_batches: 100,
            batch_size: 5,
            ascent_steps: 20,
            ascent_step_size: None,
            mc_samples: 16,
        }
    }
}

impl SharpnessQuery {
    pub fn step_size(&self) -> f64 {
        self.ascent_step_size.unwrap_or(self.rho0 / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho0.is_finite() && self.rho0 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rho0 must be >= 0, got {}",
                self.rho0
            )));
        }
        if self.n_batches == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "n_batches and batch_size must be positive".into(),
            ));
        }
        if self.norm == SharpnessNorm::AverageCase && self.mc_samples == 0 {
            return Err(Error::InvalidArgument("mc_samples must be positive".into()));
        }
        if !(self.step_size().is_finite() && self.step_size() >= 0.0) {
            return Err(Error::InvalidArgument(
                "ascent step size must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SharpnessOutcome {
    /// Mean loss increase over the batches that finished.
    pub value: f64,
    pub batches_used: usize,
    /// Batches abandoned after a non-finite loss.
    pub aborted: usize,
}

/// Mean worst-case (or average-case) loss increase under perturbations
/// `eps = diag(|theta|) delta`. Parameters are restored before returning.
pub fn adaptive_sharpness<M: Differentiable>(
    model: &mut M,
    query: &SharpnessQuery,
    stream: &RngStream,
) -> Result<SharpnessOutcome> {
    query.validate()?;
    let n = model.n_samples();
    if n == 0 {
        return Err(Error::InvalidArgument("model has no samples".into()));
    }
    let theta = model.params();
    let scale: Vec<f64> = theta.iter().map(|t| t.abs()).collect();
    let mut rng = stream.rng();
    let mut total = 0.0;
    let mut used = 0;
    let mut aborted = 0;

    for _ in 0..query.n_batches {
        let batch = sample(&mut rng, n, query.batch_size.min(n)).into_vec();
        let base = model.loss(&batch);
        if !base.is_finite() {
            aborted += 1;
            continue;
        }
        let inc = match query.norm {
            SharpnessNorm::AverageCase => {
                let mut acc = 0.0;
                let mut ok = true;
                for _ in 0..query.mc_samples {
                    let p: Vec<f64> = theta
                        .iter()
                        .zip(&scale)
                        .map(|(t, s)| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            t + query.rho0 * s * z
                        })
                        .collect();
                    model.set_params(&p);
                    let l = model.loss(&batch);
                    if !l.is_finite() {
                        ok = false;
                        break;
                    }
                    acc += l - base;
                }
                ok.then(|| acc / query.mc_samples as f64)
            }
            norm => ascend(model, &theta, &scale, &batch, base, norm, query),
        };
        model.set_params(&theta);
        match inc {
            Some(v) => {
                total += v;
                used += 1;
            }
            None => aborted += 1,
        }
    }
    model.set_params(&theta);
    if aborted > 0 {
        log::warn!(
            "adaptive sharpness: {aborted} of {} batches aborted",
            query.n_batches
        );
    }
    Ok(SharpnessOutcome {
        value: if used > 0 {
            total / used as f64
        } else {
            f64::NAN
        },
        batches_used: used,
        aborted,
    })
}

/// Projected ascent on `delta`; returns the best increase seen (never below 0).
fn ascend<M: Differentiable>(
    model: &mut M,
    theta: &[f64],
    scale: &[f64],
    batch: &[usize],
    base: f64,
    norm: SharpnessNorm,
    query: &SharpnessQuery,
) -> Option<f64> {
    let p = theta.len();
    let rho = query.rho0;
    let alpha = query.step_size();
    let mut delta = vec![0.0; p];
    let mut best = 0.0f64;
    let mut probe = theta.to_vec();
    let mut grad = model.loss_grad(batch).1;
    for _ in 0..query.ascent_steps {
        // d/d delta L(theta + T delta) = T grad
        let g: Vec<f64> = grad.iter().zip(scale).map(|(gi, s)| gi * s).collect();
        match norm {
            SharpnessNorm::L2Adaptive => {
                let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if gn == 0.0 {
                    break;
                }
                for (d, gi) in delta.iter_mut().zip(&g) {
                    *d += alpha * gi / gn;
                }
                let dn = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
                if dn > rho {
                    delta.iter_mut().for_each(|d| *d *= rho / dn);
                }
            }
            SharpnessNorm::LinfAdaptive => {
                for (d, gi) in delta.iter_mut().zip(&g) {
                    let step = if *gi > 0.0 {
                        alpha
                    } else if *gi < 0.0 {
                        -alpha
                    } else {
                        0.0
                    };
                    *d = (*d + step).clamp(-rho, rho);
                }
            }
            SharpnessNorm::AverageCase => unreachable!("handled by caller"),
        }
        for i in 0..p {
            probe[i] = theta[i] + scale[i] * delta[i];
        }
        model.set_params(&probe);
        let (l, g_next) = model.loss_grad(batch);
        if !l.is_finite() {
            return None;
        }
        best = best.max(l - base);
        grad = g_next;
    }
    Some(best)
}

/// Squared norm of the per-sample loss gradient.
pub fn fisher_trace<M: Differentiable>(model: &M, sample: usize) -> f64 {
    let (_, g) = model.loss_grad(&[sample]);
    g.iter().map(|x| x * x).sum()
}
