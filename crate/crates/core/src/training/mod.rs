//! Loss, optimizer, training loop, evaluation, gradient checking and
//! checkpoints.

mod baseline;
mod checkpoint;
mod metrics;
mod reference;

pub use crate::model::cross_entropy;
pub use baseline::{argmax, BaselineConfig, PooledLinearBaseline};
pub use checkpoint::{
    decode_checkpoint, dump_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, save_checkpoint_with_meta,
    Checkpoint, FORMAT_VERSION, MAGIC,
};
pub use metrics::{ClassMetrics, Metrics};
pub use reference::{reference_kan_forward, reference_loss};

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{parse_bool, Model, ModelConfig, SpectralFeatures};
use crate::numerics::{hash64, DoubleDouble, Matrix, SeededRng};
use crate::pointcloud::{augment, rotate_z, AugmentConfig, Dataset, PointCloud};
use crate::spectral::GraphConfig;

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;
const PREPARE_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Fraction of each class held out for validation when no separate
    /// validation set is given.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            augment: AugmentConfig::IDENTITY,
            val_fraction: 0.2,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::domain(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::domain("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::domain(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::domain("adam_eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::domain(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        self.augment.validate()
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", format!("{:e}", self.learning_rate)),
            ("adam_beta1", format!("{:e}", self.adam_beta1)),
            ("adam_beta2", format!("{:e}", self.adam_beta2)),
            ("adam_eps", format!("{:e}", self.adam_eps)),
            ("train_seed", self.seed.to_string()),
            ("augment_rotate", self.augment.rotate.to_string()),
            ("augment_jitter", format!("{:e}", self.augment.jitter_sigma)),
            ("augment_scale_lo", format!("{:e}", self.augment.scale_range.0)),
            ("augment_scale_hi", format!("{:e}", self.augment.scale_range.1)),
            ("val_fraction", format!("{:e}", self.val_fraction)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Sets one field from its `key=value` form; `Ok(false)` for unknown keys.
    /// `seed` is accepted as an alias of `train_seed`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, value)?,
            "adam_eps" => self.adam_eps = parse_num(key, value)?,
            "train_seed" | "seed" => self.seed = parse_num(key, value)?,
            "augment_rotate" => self.augment.rotate = parse_bool(key, value)?,
            "augment_jitter" => self.augment.jitter_sigma = parse_num(key, value)?,
            "augment_scale_lo" => self.augment.scale_range.0 = parse_num(key, value)?,
            "augment_scale_hi" => self.augment.scale_range.1 = parse_num(key, value)?,
            "val_fraction" => self.val_fraction = parse_num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of completed steps.
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::domain(format!(
            "adam_step: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let t = state.t as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

/// Seeded per-class split into `(train, validation)`. Each class with at
/// least two samples keeps at least one training sample.
pub fn stratified_split(data: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::domain(format!(
            "val_fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..data.num_classes() {
        let mut idx: Vec<usize> = (0..data.len())
            .filter(|&i| data.clouds[i].label == Some(class))
            .collect();
        SeededRng::new(hash64(&[seed, SPLIT_STREAM, class as u64])).shuffle(&mut idx);
        let n_val = ((val_fraction * idx.len() as f64).round() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((data.subset(&train), data.subset(&val)))
}

fn labels_of(data: &Dataset, num_classes: usize) -> Result<Vec<usize>> {
    data.clouds
        .iter()
        .enumerate()
        .map(|(i, c)| match c.label {
            Some(l) if l < num_classes => Ok(l),
            Some(l) => Err(Error::Schema(format!(
                "cloud {i} has label {l} but the model has {num_classes} classes"
            ))),
            None => Err(Error::Schema(format!("cloud {i} has no label"))),
        })
        .collect()
}

/// Resampling seed used for the `index`-th cloud of a dataset.
pub fn prepare_seed(model: &Model, index: usize) -> u64 {
    hash64(&[model.config().seed, PREPARE_STREAM, index as u64])
}

/// Prepared clouds and their spectral features, computed in parallel.
pub fn prepare_all(model: &Model, data: &Dataset) -> Result<Vec<(PointCloud, SpectralFeatures)>> {
    data.clouds
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let p = model.prepare(c, prepare_seed(model, i))?;
            let f = model.features(&p)?;
            Ok((p, f))
        })
        .collect()
}

fn metrics_from_features(model: &Model, feats: &[SpectralFeatures], labels: &[usize]) -> Result<Metrics> {
    let preds = feats
        .par_iter()
        .map(|f| Ok(argmax(&model.forward_features(f)?.logits)))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = labels.iter().copied().zip(preds).collect();
    Metrics::from_predictions(model.config().num_classes, &pairs)
}

/// Deterministic, augmentation-free evaluation.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::domain("cannot evaluate on an empty dataset"));
    }
    let labels = labels_of(data, model.config().num_classes)?;
    let feats: Vec<SpectralFeatures> = prepare_all(model, data)?.into_iter().map(|(_, f)| f).collect();
    metrics_from_features(model, &feats, &labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub train_loss: f64,
    pub val: Metrics,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters from the epoch with the best validation accuracy (the
    /// later epoch on ties).
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Training stopped early; carries the best model seen before the failure.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: Model,
    pub history: Vec<EpochRecord>,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "training aborted after {} epochs: {}",
            self.history.len(),
            self.error
        )
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        f.error
    }
}

/// `header epoch,train_loss,val_accuracy`, one row per epoch.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_accuracy\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val.accuracy));
    }
    out
}

/// Features for one training sample in one epoch, augmented if configured.
/// A pure rotation is applied to the cached features directly.
fn sample_features(
    model: &Model,
    cfg: &TrainConfig,
    cached: &(PointCloud, SpectralFeatures),
    epoch: usize,
    index: usize,
) -> Result<SpectralFeatures> {
    if cfg.augment.is_identity() {
        return Ok(cached.1.clone());
    }
    let mut rng = SeededRng::new(hash64(&[cfg.seed, AUGMENT_STREAM, epoch as u64, index as u64]));
    if cfg.augment.is_isometry() {
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        let f = &cached.1;
        return Ok(SpectralFeatures {
            x: rotate_z(&f.x, angle),
            sharp: rotate_z(&f.sharp, angle),
            gentle: rotate_z(&f.gentle, angle),
        });
    }
    model.features(&augment(&cached.0, &cfg.augment, &mut rng)?)
}

/// Mini-batch Adam on the mean cross-entropy. Per-sample gradients are
/// computed in parallel and summed in batch order.
pub fn train(
    model: &Model,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainFailure> {
    let fail = |error: Error, last_good: &Model, history: Vec<EpochRecord>| TrainFailure {
        error,
        last_good: last_good.clone(),
        history,
    };
    let setup = || -> Result<_> {
        cfg.validate()?;
        if train_set.is_empty() || val_set.is_empty() {
            return Err(Error::domain("training and validation sets must be non-empty"));
        }
        let k = model.config().num_classes;
        for d in [train_set, val_set] {
            if d.num_classes() != k {
                return Err(Error::Schema(format!(
                    "dataset has {} classes but the model has {k}",
                    d.num_classes()
                )));
            }
        }
        let train_labels = labels_of(train_set, k)?;
        let val_labels = labels_of(val_set, k)?;
        let train_cache = prepare_all(model, train_set)?;
        let val_feats: Vec<_> = prepare_all(model, val_set)?.into_iter().map(|(_, f)| f).collect();
        Ok((train_labels, val_labels, train_cache, val_feats))
    };
    let (train_labels, val_labels, train_cache, val_feats) = setup().map_err(|e| fail(e, model, Vec::new()))?;

    let mut current = model.clone();
    let mut params = current.params_flat();
    let mut state = AdamState::new(params.len());
    let mut best = model.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_cache.len()).collect();
        SeededRng::new(hash64(&[cfg.seed, SHUFFLE_STREAM, epoch as u64])).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| {
                    let f = sample_features(&current, cfg, &train_cache[i], epoch, i)?;
                    let (loss, grad, _) = current.loss_and_grad(&f, train_labels[i])?;
                    Ok((loss, grad))
                })
                .collect();
            let mut grad = vec![0.0; params.len()];
            for r in results {
                let (loss, g) = r.map_err(|e| fail(e, &best, history.clone()))?;
                loss_sum += loss;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam_step(&mut params, &grad, &mut state, cfg).map_err(|e| fail(e, &best, history.clone()))?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(fail(Error::Numeric { stage: "optimizer" }, &best, history));
            }
            current
                .set_params_flat(&params)
                .map_err(|e| fail(e, &best, history.clone()))?;
        }
        let val =
            metrics_from_features(&current, &val_feats, &val_labels).map_err(|e| fail(e, &best, history.clone()))?;
        if val.accuracy >= best_acc {
            best_acc = val.accuracy;
            best_epoch = epoch;
            best = current.clone();
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_cache.len() as f64,
            val,
        });
    }
    Ok(TrainReport {
        model: best,
        history,
        best_epoch,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub analytic: f64,
    /// Central difference with both losses evaluated in `f64`.
    pub numeric: f64,
    pub rel_error: f64,
    /// Same central difference with both losses evaluated in double-double.
    pub numeric_extended: f64,
    pub rel_error_extended: f64,
}

/// Maximum and mean relative error over all parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub max: f64,
    pub mean: f64,
    /// Parameter with the largest error.
    pub worst: String,
}

impl ErrorSummary {
    fn from_errors<'a>(errors: impl Iterator<Item = (&'a str, f64)>) -> Self {
        let mut max = 0.0;
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut worst = String::new();
        for (name, e) in errors {
            if e > max || count == 0 {
                max = e;
                worst = name.to_string();
            }
            sum += e;
            count += 1;
        }
        Self {
            max,
            mean: sum / count.max(1) as f64,
            worst,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub h: f64,
    pub entries: Vec<GradCheckEntry>,
    /// Against the `f64` central differences.
    pub double: ErrorSummary,
    /// Against the double-double central differences.
    pub extended: ErrorSummary,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient with central differences
/// `(L(θ + h) − L(θ − h)) / 2h` for every parameter. The cloud is used as
/// given.
///
/// Each difference is evaluated twice: with the model's own `f64` forward
/// pass, and with an independent double-double evaluation of the loss.
/// In `f64` the loss is quantized to `ulp(L)`, so the first form cannot
/// resolve gradients much below `ulp(L) / h` (about `1e-11` for `L ≈ 1`).
pub fn grad_check(model: &Model, cloud: &PointCloud, label: usize, h: f64) -> Result<GradCheckReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::domain(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let f = model.features(cloud)?;
    let (_, grad, _) = model.loss_and_grad(&f, label)?;
    let base = model.params_flat();
    let base_dd: Vec<DoubleDouble> = base.iter().map(|&v| DoubleDouble::from(v)).collect();
    let names: Vec<String> = model
        .param_specs()
        .iter()
        .flat_map(|s| (0..s.len()).map(move |i| format!("{}[{i}]", s.name)))
        .collect();
    let hd = DoubleDouble::from(h);
    let entries = (0..base.len())
        .into_par_iter()
        .map(|k| {
            let mut m = model.clone();
            let mut p = base.clone();
            p[k] = base[k] + h;
            m.set_params_flat(&p)?;
            let plus = cross_entropy(&m.forward_features(&f)?.logits, label)?;
            p[k] = base[k] - h;
            m.set_params_flat(&p)?;
            let minus = cross_entropy(&m.forward_features(&f)?.logits, label)?;
            let numeric = (plus - minus) / (2.0 * h);

            let mut q = base_dd.clone();
            q[k] = base_dd[k] + hd;
            let plus = reference_loss(model, &f, &q, label)?;
            q[k] = base_dd[k] - hd;
            let minus = reference_loss(model, &f, &q, label)?;
            let numeric_extended = ((plus - minus) / (hd + hd)).to_f64();
            Ok(GradCheckEntry {
                name: names[k].clone(),
                analytic: grad[k],
                numeric,
                rel_error: relative_error(grad[k], numeric),
                numeric_extended,
                rel_error_extended: relative_error(grad[k], numeric_extended),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport {
        h,
        double: ErrorSummary::from_errors(entries.iter().map(|e| (e.name.as_str(), e.rel_error))),
        extended: ErrorSummary::from_errors(entries.iter().map(|e| (e.name.as_str(), e.rel_error_extended))),
        entries,
    })
}

/// Kernel scale matched to the point density of an `n`-point cloud on the
/// unit sphere, equal to the defaults at `n = 256`.
pub fn density_matched_graph(n: usize) -> GraphConfig {
    let sigma = GraphConfig::default().sigma * (256.0 / n.max(1) as f64).sqrt();
    GraphConfig {
        sigma,
        tau: 2.0 * sigma,
        ..GraphConfig::default()
    }
}

/// Small random model (C=3, G=4, d_att=3, 2 classes) with a random
/// normalized cloud of `points` points and label, for gradient checks.
pub fn tiny_gradcheck_setup(seed: u64, points: usize) -> Result<(Model, PointCloud, usize)> {
    if points < 2 {
        return Err(Error::domain("gradient check needs at least 2 points"));
    }
    let config = ModelConfig {
        graph: density_matched_graph(points),
        grid_g: 4,
        d_att: 3,
        num_classes: 2,
        num_points: points,
        seed,
        ..ModelConfig::default()
    };
    let model = Model::new(config)?;
    let mut rng = SeededRng::new(hash64(&[seed, 0x6772_6164]));
    let pts = Matrix::from_fn(points, 3, |_, _| rng.standard_normal());
    let label = rng.index(2);
    let cloud = model.prepare(&PointCloud::new(pts, Some(label))?, seed)?;
    Ok((model, cloud, label))
}
