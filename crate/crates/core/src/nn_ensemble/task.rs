//! Gaussian-blob classification with a noise-corrupted out-of-distribution split.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::Dataset;
use crate::error::{Error, Result};
use crate::numkernel::RngStream;

const TAG_CENTERS: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_TEST: u64 = 3;
const TAG_OOD: u64 = 4;

pub const SEVERITIES: [u32; 5] = [1, 2, 3, 4, 5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTask {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub d_in: usize,
    pub classes: usize,
    /// Scale of the class centres; centres are `separation * N(0, I/d_in)`.
    pub separation: f64,
    /// Fraction of training labels replaced by a uniformly random class.
    pub label_noise: f64,
    /// OOD severity `s` adds `N(0, (s * ood_base_scale)^2 I)` to test inputs.
    pub ood_base_scale: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 2000,
            n_test: 1000,
            d_in: 20,
            classes: 5,
            separation: 2.0,
            label_noise: 0.0,
            ood_base_scale: 0.3,
        }
    }
}

/// Generated splits.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
    /// `(severity, corrupted test set)`, severities 1 through 5.
    pub ood: Vec<(u32, Dataset)>,
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 || self.d_in == 0 || self.classes < 2 {
            return Err(Error::InvalidArgument(
                "task needs positive sizes and at least two classes".into(),
            ));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0)
            || !(0.0..=1.0).contains(&self.label_noise)
            || !(self.ood_base_scale.is_finite() && self.ood_base_scale >= 0.0)
        {
            return Err(Error::InvalidArgument("task scales out of range".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<TaskData> {
        self.validate()?;
        let root = RngStream::new(self.seed, 0);
        let d = self.d_in;
        let mut rng = root.derive(TAG_CENTERS).rng();
        let scale = self.separation / (d as f64).sqrt();
        let centers: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| {
                (0..d)
                    .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect::<Vec<f64>>()
            })
            .collect();

        let train = self.sample(
            &centers,
            self.n_train,
            self.label_noise,
            &root.derive(TAG_TRAIN),
        )?;
        let test = self.sample(&centers, self.n_test, 0.0, &root.derive(TAG_TEST))?;
        let ood_root = root.derive(TAG_OOD);
        let ood = SEVERITIES
            .iter()
            .map(|&s| {
                let mut rng = ood_root.derive(s as u64).rng();
                let sd = s as f64 * self.ood_base_scale;
                let x = test
                    .x
                    .iter()
                    .map(|v| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v + sd * z
                    })
                    .collect();
                Ok((s, Dataset::new(d, x, test.y.clone())?))
            })
            .collect::<Result<_>>()?;
        Ok(TaskData { train, test, ood })
    }

    fn sample(
        &self,
        centers: &[Vec<f64>],
        n: usize,
        noise: f64,
        stream: &RngStream,
    ) -> Result<Dataset> {
        let mut rng = stream.rng();
        let d = self.d_in;
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % self.classes;
            for v in &centers[class] {
                let z: f64 = StandardNormal.sample(&mut rng);
                x.push(v + z);
            }
            let label = if noise > 0.0 && rng.random::<f64>() < noise {
                rng.random_range(0..self.classes)
            } else {
                class
            };
            y.push(label);
        }
        Dataset::new(d, x, y)
    }
}
