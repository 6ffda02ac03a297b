//! Reference classifier that skips the geometric pipeline: a softmax-linear
//! model on the column-wise max and mean of the raw coordinates.

use crate::attention::{global_pool, softmax};
use crate::error::{Error, Result};
use crate::model::cross_entropy;
use crate::pointcloud::Dataset;
use crate::training::metrics::Metrics;
use crate::training::{adam_step, AdamState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.05,
        }
    }
}

/// Linear classifier on standardized pooled coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledLinearBaseline {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes × features`, row-major, followed by `classes` biases.
    params: Vec<f64>,
    num_classes: usize,
}

fn pooled(data: &Dataset) -> Result<Vec<Vec<f64>>> {
    data.clouds.iter().map(|c| global_pool(c.points())).collect()
}

impl PooledLinearBaseline {
    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn logits(&self, z: &[f64]) -> Vec<f64> {
        let d = z.len();
        (0..self.num_classes)
            .map(|c| {
                let w = &self.params[c * d..(c + 1) * d];
                w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + self.params[self.num_classes * d + c]
            })
            .collect()
    }

    /// Full-batch Adam on the mean cross-entropy, from zero weights.
    pub fn fit(data: &Dataset, cfg: &BaselineConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::domain("cannot fit a baseline on an empty dataset"));
        }
        let feats = pooled(data)?;
        let labels: Vec<usize> = data
            .clouds
            .iter()
            .map(|c| {
                c.label
                    .ok_or_else(|| Error::Schema("baseline needs labelled clouds".into()))
            })
            .collect::<Result<_>>()?;
        let d = feats[0].len();
        let n = feats.len() as f64;
        let mean: Vec<f64> = (0..d).map(|k| feats.iter().map(|f| f[k]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|k| {
                let var = feats.iter().map(|f| (f[k] - mean[k]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let k = data.num_classes();
        let mut model = Self {
            mean,
            scale,
            params: vec![0.0; k * d + k],
            num_classes: k,
        };
        let z: Vec<Vec<f64>> = feats.iter().map(|f| model.standardize(f)).collect();
        let mut state = AdamState::new(model.params.len());
        let train = super::TrainConfig {
            learning_rate: cfg.learning_rate,
            ..super::TrainConfig::default()
        };
        for _ in 0..cfg.epochs {
            let mut grad = vec![0.0; model.params.len()];
            for (zi, &y) in z.iter().zip(&labels) {
                let mut p = softmax(&model.logits(zi));
                p[y] -= 1.0;
                for c in 0..k {
                    for (g, v) in grad[c * d..(c + 1) * d].iter_mut().zip(zi) {
                        *g += p[c] * v / n;
                    }
                    grad[k * d + c] += p[c] / n;
                }
            }
            adam_step(&mut model.params, &grad, &mut state, &train)?;
        }
        Ok(model)
    }

    pub fn predict(&self, points: &crate::numerics::Matrix) -> Result<usize> {
        let z = self.standardize(&global_pool(points)?);
        let l = self.logits(&z);
        Ok(argmax(&l))
    }

    pub fn mean_loss(&self, data: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        for c in &data.clouds {
            let z = self.standardize(&global_pool(c.points())?);
            total += cross_entropy(&self.logits(&z), c.label.unwrap_or(0))?;
        }
        Ok(total / data.len().max(1) as f64)
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<Metrics> {
        let pairs = data
            .clouds
            .iter()
            .map(|c| Ok((c.label.unwrap_or(0), self.predict(c.points())?)))
            .collect::<Result<Vec<_>>>()?;
        Metrics::from_predictions(self.num_classes, &pairs)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
