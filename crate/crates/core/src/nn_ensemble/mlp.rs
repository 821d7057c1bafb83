//! One-hidden-layer rectifier network with softmax output and hand-written backprop.
//!
//! Flat parameter layout: `W1` (`h x d_in`, row-major), `b1` (`h`),
//! `W2` (`c x h`, row-major), `b2` (`c`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{gaussian_vector, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub d_in: usize,
    pub hidden: usize,
    pub classes: usize,
    params: Vec<f64>,
}

/// Labelled inputs, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub d_in: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn new(d_in: usize, x: Vec<f64>, y: Vec<usize>) -> Result<Self> {
        if d_in == 0 || x.len() != d_in * y.len() {
            return Err(Error::InvalidArgument(format!(
                "dataset: {} values for {} rows of width {d_in}",
                x.len(),
                y.len()
            )));
        }
        Ok(Self { d_in, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.x[i * self.d_in..(i + 1) * self.d_in]
    }
}

/// Loss, mean gradient and optionally one gradient per sample.
#[derive(Clone, Debug)]
pub struct BatchGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub per_sample: Option<Vec<Vec<f64>>>,
}

impl MlpModel {
    pub fn n_params_for(d_in: usize, hidden: usize, classes: usize) -> usize {
        hidden * d_in + hidden + classes * hidden + classes
    }

    pub fn zeros(d_in: usize, hidden: usize, classes: usize) -> Self {
        Self {
            d_in,
            hidden,
            classes,
            params: vec![0.0; Self::n_params_for(d_in, hidden, classes)],
        }
    }

    /// He-normal hidden weights, `1/h`-variance output weights, zero biases.
    pub fn init(d_in: usize, hidden: usize, classes: usize, stream: &RngStream) -> Self {
        let mut m = Self::zeros(d_in, hidden, classes);
        let w1 = gaussian_vector(&stream.derive(1), hidden * d_in, 2.0 / d_in as f64);
        let w2 = gaussian_vector(&stream.derive(2), classes * hidden, 1.0 / hidden as f64);
        let (o1, o2) = (0, hidden * d_in + hidden);
        m.params[o1..o1 + hidden * d_in].copy_from_slice(w1.as_slice());
        m.params[o2..o2 + classes * hidden].copy_from_slice(w2.as_slice());
        m
    }

    pub fn from_params(
        d_in: usize,
        hidden: usize,
        classes: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        if params.len() != Self::n_params_for(d_in, hidden, classes) {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                Self::n_params_for(d_in, hidden, classes),
                params.len()
            )));
        }
        Ok(Self {
            d_in,
            hidden,
            classes,
            params,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.d_in;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        (b1, w2, b2)
    }

    /// Hidden activations and logits for one input.
    fn forward_one(&self, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let (ob1, ow2, ob2) = self.offsets();
        let p = &self.params;
        for j in 0..self.hidden {
            let row = &p[j * self.d_in..(j + 1) * self.d_in];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[ob1 + j];
            hidden[j] = z.max(0.0);
        }
        for k in 0..self.classes {
            let row = &p[ow2 + k * self.hidden..ow2 + (k + 1) * self.hidden];
            logits[k] = row
                .iter()
                .zip(hidden.iter())
                .map(|(w, a)| w * a)
                .sum::<f64>()
                + p[ob2 + k];
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden];
        let mut l = vec![0.0; self.classes];
        self.forward_one(x, &mut h, &mut l);
        l
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Softmax outputs for every row of `data`.
    pub fn predict_all(&self, data: &Dataset) -> Vec<Vec<f64>> {
        (0..data.len())
            .map(|i| self.predict_proba(data.input(i)))
            .collect()
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = (0..data.len())
            .filter(|&i| crate::metrics::argmax(&self.logits(data.input(i))) == data.y[i])
            .count();
        hits as f64 / data.len() as f64
    }

    /// Mean cross-entropy over `batch` and its gradient.
    pub fn forward_backward(
        &self,
        data: &Dataset,
        batch: &[usize],
        per_sample: bool,
    ) -> Result<BatchGrad> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (ob1, ow2, ob2) = self.offsets();
        let (d, h, c) = (self.d_in, self.hidden, self.classes);
        let p = &self.params;
        let mut grad = vec![0.0; p.len()];
        let mut samples = per_sample.then(|| Vec::with_capacity(batch.len()));
        let mut hid = vec![0.0; h];
        let mut logits = vec![0.0; c];
        let mut delta1 = vec![0.0; h];
        let mut loss = 0.0;
        let mut g_one = vec![0.0; if per_sample { p.len() } else { 0 }];

        for &i in batch {
            let x = data.input(i);
            let y = data.y[i];
            self.forward_one(x, &mut hid, &mut logits);
            let prob = softmax(&logits);
            let lse = log_sum_exp(&logits);
            let l = lse - logits[y];
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("cross-entropy on sample {i}")));
            }
            loss += l;

            let g: &mut [f64] = if per_sample {
                g_one.iter_mut().for_each(|v| *v = 0.0);
                &mut g_one
            } else {
                &mut grad
            };
            // output layer: delta2 = prob - onehot(y)
            delta1.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..c {
                let d2 = prob[k] - if k == y { 1.0 } else { 0.0 };
                g[ob2 + k] += d2;
                let row = ow2 + k * h;
                for j in 0..h {
                    g[row + j] += d2 * hid[j];
                    delta1[j] += d2 * p[row + j];
                }
            }
            for j in 0..h {
                if hid[j] <= 0.0 {
                    continue;
                }
                let d1 = delta1[j];
                g[ob1 + j] += d1;
                let row = j * d;
                for (gi, xi) in g[row..row + d].iter_mut().zip(x) {
                    *gi += d1 * xi;
                }
            }
            if let Some(s) = samples.as_mut() {
                for (acc, v) in grad.iter_mut().zip(g_one.iter()) {
                    *acc += v;
                }
                s.push(g_one.clone());
            }
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|v| *v /= n);
        Ok(BatchGrad {
            loss: loss / n,
            grad,
            per_sample: samples,
        })
    }

    /// Squared gradient norm of the single-sample loss for every index in `samples`.
    pub fn per_sample_fisher(&self, data: &Dataset, samples: &[usize]) -> Result<Vec<f64>> {
        samples
            .iter()
            .map(|&i| {
                let g = self.forward_backward(data, &[i], false)?.grad;
                Ok(g.iter().map(|v| v * v).sum())
            })
            .collect()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// A model paired with the data its loss is measured on.
pub struct BoundModel<'a> {
    pub model: MlpModel,
    pub data: &'a Dataset,
}

impl crate::metrics::Differentiable for BoundModel<'_> {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }

    fn n_samples(&self) -> usize {
        self.data.len()
    }

    fn params(&self) -> Vec<f64> {
        self.model.params.clone()
    }

    fn set_params(&mut self, params: &[f64]) {
        self.model.params.copy_from_slice(params);
    }

    fn loss_grad(&self, samples: &[usize]) -> (f64, Vec<f64>) {
        match self.model.forward_backward(self.data, samples, false) {
            Ok(b) => (b.loss, b.grad),
            Err(_) => (f64::NAN, vec![f64::NAN; self.model.n_params()]),
        }
    }
}
