//! The full classifier: spectral disentanglement, per-branch KAN stacks,
//! attention refinement, fusion, pooling and the linear head.
//!
//! Parameters are enumerated in a fixed registry order, used for flat
//! gradient vectors and checkpoints:
//!
//! ```text
//! kan_sharp.layer{l}.{coef,w_base,w_spline}   (kan_shared.* when branches share)
//! kan_gentle.layer{l}.{coef,w_base,w_spline}
//! ura.theta_o  ura.theta_s  ura.phi_o  ura.phi_g
//! head.weight  head.bias
//! ```

use crate::attention::{
    classify, classify_backward, fuse, global_pool, global_pool_backward, softmax, ura_backward, ura_refine,
    ura_weights, AttentionMode, ClassifierHead, FusionOutput, UraBlock,
};
use crate::error::{Error, Result};
use crate::kan::{KanStack, SplineGrid};
use crate::numerics::{Matrix, SeededRng};
use crate::pointcloud::{normalize_unit_sphere, sample_points, PointCloud};
use crate::spectral::{band_split, build_affinity, laplacian_basis, spectral_filter, AdjacencyNorm, GraphConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub graph: GraphConfig,
    pub split_fraction: f64,
    /// Hidden widths of each KAN stack; empty means a single `C → C` layer.
    pub kan_hidden: Vec<usize>,
    /// Forces one hidden layer of width `2C + 1`, overriding `kan_hidden`.
    pub ka_width: bool,
    pub grid_g: usize,
    pub spline_degree: usize,
    pub grid_extent: f64,
    pub d_att: usize,
    pub num_classes: usize,
    pub in_channels: usize,
    /// Clouds are resampled to this many points before the forward pass.
    pub num_points: usize,
    /// Center and scale clouds into the unit ball before the forward pass.
    pub normalize: bool,
    pub attention: AttentionMode,
    pub share_branches: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            graph: GraphConfig::default(),
            split_fraction: 0.5,
            kan_hidden: vec![6],
            ka_width: false,
            grid_g: 8,
            spline_degree: 3,
            grid_extent: 2.0,
            d_att: 3,
            num_classes: 4,
            in_channels: 3,
            num_points: 256,
            normalize: true,
            attention: AttentionMode::Softmax,
            share_branches: false,
            seed: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::domain(format!("invalid value {value:?} for {key}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::domain(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v)).collect()
}

impl ModelConfig {
    /// Default configuration for `in_channels` channels: hidden width and
    /// `d_att` follow the channel count.
    pub fn for_channels(in_channels: usize, num_classes: usize) -> Self {
        Self {
            kan_hidden: vec![2 * in_channels],
            d_att: in_channels,
            in_channels,
            num_classes,
            ..Self::default()
        }
    }

    /// Widths of each KAN stack from input to output.
    pub fn kan_dims(&self) -> Vec<usize> {
        let c = self.in_channels;
        let mut dims = vec![c];
        if self.ka_width {
            dims.push(2 * c + 1);
        } else {
            dims.extend_from_slice(&self.kan_hidden);
        }
        dims.push(c);
        dims
    }

    /// Length of the pooled feature vector.
    pub fn pooled_dim(&self) -> usize {
        4 * self.in_channels
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::domain(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        let counts = [
            ("grid_g", self.grid_g),
            ("spline_degree", self.spline_degree),
            ("d_att", self.d_att),
            ("num_classes", self.num_classes),
            ("in_channels", self.in_channels),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::domain(format!("{name} must be at least 1")));
            }
        }
        if self.num_points < 2 {
            return Err(Error::domain("num_points must be at least 2"));
        }
        if self.kan_hidden.contains(&0) {
            return Err(Error::domain("kan_hidden widths must be at least 1"));
        }
        if !(self.grid_extent > 0.0 && self.grid_extent.is_finite()) {
            return Err(Error::domain("grid_extent must be positive"));
        }
        Ok(())
    }

    /// Canonical `key=value` form, one entry per field.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let hidden: Vec<String> = self.kan_hidden.iter().map(|h| h.to_string()).collect();
        [
            ("sigma", format!("{:e}", self.graph.sigma)),
            ("tau", format!("{:e}", self.graph.tau)),
            ("self_loops", self.graph.self_loops.to_string()),
            ("adjacency_norm", self.graph.norm.as_str().to_string()),
            ("split_fraction", format!("{:e}", self.split_fraction)),
            ("kan_hidden", hidden.join(",")),
            ("ka_width", self.ka_width.to_string()),
            ("grid_g", self.grid_g.to_string()),
            ("spline_degree", self.spline_degree.to_string()),
            ("grid_extent", format!("{:e}", self.grid_extent)),
            ("d_att", self.d_att.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("num_points", self.num_points.to_string()),
            ("normalize", self.normalize.to_string()),
            ("ura_raw", (self.attention == AttentionMode::Raw).to_string()),
            ("share_branches", self.share_branches.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Sets one field from its `key=value` form. Returns `Ok(false)` for keys
    /// that do not belong to the model configuration.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "sigma" => self.graph.sigma = parse_value(key, value)?,
            "tau" => self.graph.tau = parse_value(key, value)?,
            "self_loops" => self.graph.self_loops = parse_bool(key, value)?,
            "adjacency_norm" => self.graph.norm = AdjacencyNorm::parse(value.trim())?,
            "split_fraction" => self.split_fraction = parse_value(key, value)?,
            "kan_hidden" => self.kan_hidden = parse_list(key, value)?,
            "ka_width" => self.ka_width = parse_bool(key, value)?,
            "grid_g" => self.grid_g = parse_value(key, value)?,
            "spline_degree" => self.spline_degree = parse_value(key, value)?,
            "grid_extent" => self.grid_extent = parse_value(key, value)?,
            "d_att" => self.d_att = parse_value(key, value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "in_channels" => self.in_channels = parse_value(key, value)?,
            "num_points" => self.num_points = parse_value(key, value)?,
            "normalize" => self.normalize = parse_bool(key, value)?,
            "ura_raw" => {
                self.attention = if parse_bool(key, value)? {
                    AttentionMode::Raw
                } else {
                    AttentionMode::Softmax
                }
            }
            "share_branches" => self.share_branches = parse_bool(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Name and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameter-free inputs to the learned part of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFeatures {
    /// `X`
    pub x: Matrix,
    /// `X̂_s`
    pub sharp: Matrix,
    /// `X̂_g`
    pub gentle: Matrix,
}

impl SpectralFeatures {
    /// Right-multiplies all three signals by `r`. Every stage producing them
    /// is linear in `X` with a graph that depends only on pairwise distances,
    /// so for an orthogonal `r` this equals recomputing from `X r`.
    pub fn transformed(&self, r: &Matrix) -> Result<Self> {
        Ok(Self {
            x: self.x.matmul(r)?,
            sharp: self.sharp.matmul(r)?,
            gentle: self.gentle.matmul(r)?,
        })
    }
}

fn check_stage(m: &Matrix, stage: &'static str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric { stage })
    }
}

fn check_vec(v: &[f64], stage: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { stage })
    }
}

/// Graph, eigenbasis, band split and filtering for one cloud.
pub fn spectral_features(cloud: &PointCloud, graph_cfg: &GraphConfig, split_fraction: f64) -> Result<SpectralFeatures> {
    let graph = build_affinity(cloud, graph_cfg)?;
    check_stage(&graph.norm_adjacency, "affinity")?;
    let basis = laplacian_basis(&graph, split_fraction)?;
    check_stage(&basis.eigenvectors, "laplacian_basis")?;
    let (xs, xg) = band_split(&basis, cloud.points())?;
    check_stage(&xs, "band_split")?;
    check_stage(&xg, "band_split")?;
    let filtered = spectral_filter(&graph, &xs, &xg)?;
    check_stage(&filtered.sharp, "spectral_filter")?;
    check_stage(&filtered.gentle, "spectral_filter")?;
    Ok(SpectralFeatures {
        x: cloud.points().clone(),
        sharp: filtered.sharp,
        gentle: filtered.gentle,
    })
}

/// `−log softmax(logits)[label]` with the max-shift trick.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::domain(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    Ok(max + sum.ln() - logits[label])
}

struct Trace {
    kan_sharp: Matrix,
    kan_gentle: Matrix,
    w_sharp: Matrix,
    w_gentle: Matrix,
    out: FusionOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    /// One stack when branches share weights, otherwise sharp then gentle.
    branches: Vec<KanStack>,
    ura: UraBlock,
    head: ClassifierHead,
}

impl Model {
    /// Randomly initialized model, seeded from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed);
        let grid = SplineGrid::uniform(config.grid_g, config.spline_degree, config.grid_extent)?;
        let dims = config.kan_dims();
        let count = if config.share_branches { 1 } else { 2 };
        let branches = (0..count)
            .map(|_| KanStack::random(&dims, &grid, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let ura = UraBlock::random(config.in_channels, config.d_att, config.attention, &mut rng)?;
        let head = ClassifierHead::random(config.pooled_dim(), config.num_classes, &mut rng)?;
        Ok(Self {
            config,
            branches,
            ura,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kan_sharp(&self) -> &KanStack {
        &self.branches[0]
    }

    pub fn kan_gentle(&self) -> &KanStack {
        &self.branches[self.branches.len() - 1]
    }

    pub fn ura(&self) -> &UraBlock {
        &self.ura
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn kan_sharp_mut(&mut self) -> &mut KanStack {
        &mut self.branches[0]
    }

    pub fn kan_gentle_mut(&mut self) -> &mut KanStack {
        let last = self.branches.len() - 1;
        &mut self.branches[last]
    }

    pub fn ura_mut(&mut self) -> &mut UraBlock {
        &mut self.ura
    }

    pub fn head_mut(&mut self) -> &mut ClassifierHead {
        &mut self.head
    }

    fn branch_names(&self) -> &'static [&'static str] {
        if self.branches.len() == 1 {
            &["kan_shared"]
        } else {
            &["kan_sharp", "kan_gentle"]
        }
    }

    /// Names and shapes in registry order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for (stack, prefix) in self.branches.iter().zip(self.branch_names()) {
            for (l, layer) in stack.layers().iter().enumerate() {
                for (name, shape, _) in layer.param_blocks() {
                    specs.push(ParamSpec {
                        name: format!("{prefix}.layer{l}.{name}"),
                        shape,
                    });
                }
            }
        }
        let (c, d) = (self.ura.channels(), self.ura.d_att());
        for name in ["theta_o", "theta_s", "phi_o", "phi_g"] {
            specs.push(ParamSpec {
                name: format!("ura.{name}"),
                shape: vec![c, d],
            });
        }
        specs.push(ParamSpec {
            name: "head.weight".into(),
            shape: vec![self.head.num_classes(), self.head.pooled_dim()],
        });
        specs.push(ParamSpec {
            name: "head.bias".into(),
            shape: vec![self.head.num_classes()],
        });
        specs
    }

    /// Parameter values in registry order, one slice per [`ParamSpec`].
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for stack in &self.branches {
            for layer in stack.layers() {
                out.extend(layer.param_blocks().into_iter().map(|(_, _, v)| v));
            }
        }
        out.extend(self.ura.projections().map(|m| m.data()));
        out.push(self.head.weights.data());
        out.push(&self.head.bias);
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for stack in &mut self.branches {
            for layer in stack.layers_mut() {
                out.extend(layer.param_blocks_mut());
            }
        }
        out.extend(self.ura.projections_mut().map(|m| m.data_mut()));
        out.push(self.head.weights.data_mut());
        out.push(&mut self.head.bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::domain(format!(
                "model has {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut rest = flat;
        for slot in self.param_slices_mut() {
            let (head, tail) = rest.split_at(slot.len());
            slot.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Registry name of the parameter at flat index `idx`.
    pub fn param_name(&self, idx: usize) -> Option<String> {
        let mut offset = 0;
        for spec in self.param_specs() {
            let len = spec.len();
            if idx < offset + len {
                return Some(format!("{}[{}]", spec.name, idx - offset));
            }
            offset += len;
        }
        None
    }

    /// Resamples to `num_points` when the size differs (seeded by `seed`),
    /// then normalizes to the unit sphere if configured.
    pub fn prepare(&self, cloud: &PointCloud, seed: u64) -> Result<PointCloud> {
        if cloud.channels() != self.config.in_channels {
            return Err(Error::domain(format!(
                "model expects {} channels, cloud has {}",
                self.config.in_channels,
                cloud.channels()
            )));
        }
        let sampled = if cloud.len() == self.config.num_points {
            cloud.clone()
        } else {
            sample_points(cloud, self.config.num_points, &mut SeededRng::new(seed))?
        };
        if self.config.normalize {
            normalize_unit_sphere(&sampled)
        } else {
            Ok(sampled)
        }
    }

    pub fn features(&self, cloud: &PointCloud) -> Result<SpectralFeatures> {
        spectral_features(cloud, &self.config.graph, self.config.split_fraction)
    }

    fn trace(&self, f: &SpectralFeatures) -> Result<Trace> {
        let c = self.config.in_channels;
        if f.x.cols() != c || f.sharp.shape() != f.x.shape() || f.gentle.shape() != f.x.shape() {
            return Err(Error::domain(format!(
                "features must be N×{c}, got {:?}, {:?}, {:?}",
                f.x.shape(),
                f.sharp.shape(),
                f.gentle.shape()
            )));
        }
        let kan_sharp = self.kan_sharp().forward(&f.sharp)?;
        check_stage(&kan_sharp, "kan_sharp")?;
        let kan_gentle = self.kan_gentle().forward(&f.gentle)?;
        check_stage(&kan_gentle, "kan_gentle")?;
        let mode = self.ura.mode;
        let w_sharp = ura_weights(&self.ura.theta_o, &self.ura.theta_s, &f.x, &kan_sharp, mode)?;
        let refined_sharp = ura_refine(&f.x, &w_sharp, &kan_sharp)?;
        check_stage(&refined_sharp, "ura_sharp")?;
        let w_gentle = ura_weights(&self.ura.phi_o, &self.ura.phi_g, &f.x, &kan_gentle, mode)?;
        let refined_gentle = ura_refine(&f.x, &w_gentle, &kan_gentle)?;
        check_stage(&refined_gentle, "ura_gentle")?;
        let fused = fuse(&refined_sharp, &refined_gentle)?;
        let pooled = global_pool(&fused)?;
        check_vec(&pooled, "pool")?;
        let logits = classify(&self.head, &pooled)?;
        check_vec(&logits, "head")?;
        Ok(Trace {
            kan_sharp,
            kan_gentle,
            w_sharp,
            w_gentle,
            out: FusionOutput {
                refined_sharp,
                refined_gentle,
                fused,
                pooled,
                logits,
            },
        })
    }

    /// Forward pass from precomputed spectral features.
    pub fn forward_features(&self, f: &SpectralFeatures) -> Result<FusionOutput> {
        Ok(self.trace(f)?.out)
    }

    /// Full forward pass. The cloud is used as given; see [`Model::prepare`].
    pub fn forward(&self, cloud: &PointCloud) -> Result<FusionOutput> {
        self.forward_features(&self.features(cloud)?)
    }

    pub fn predict_proba(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        Ok(softmax(&self.forward(cloud)?.logits))
    }

    /// Cross-entropy loss, its gradient in registry order, and the forward output.
    pub fn loss_and_grad(&self, f: &SpectralFeatures, label: usize) -> Result<(f64, Vec<f64>, FusionOutput)> {
        let t = self.trace(f)?;
        let loss = cross_entropy(&t.out.logits, label)?;
        let mut d_logits = softmax(&t.out.logits);
        d_logits[label] -= 1.0;

        let (g_head_w, g_head_b, d_pooled) = classify_backward(&self.head, &t.out.pooled, &d_logits);
        let d_fused = global_pool_backward(&t.out.fused, &d_pooled)?;
        let c = self.config.in_channels;
        let d_sharp = d_fused.columns(0, c);
        let d_gentle = d_fused.columns(c, 2 * c);
        let mode = self.ura.mode;
        let gs = ura_backward(
            &self.ura.theta_o,
            &self.ura.theta_s,
            &f.x,
            &t.kan_sharp,
            &t.w_sharp,
            &d_sharp,
            mode,
        )?;
        let gg = ura_backward(
            &self.ura.phi_o,
            &self.ura.phi_g,
            &f.x,
            &t.kan_gentle,
            &t.w_gentle,
            &d_gentle,
            mode,
        )?;
        let (k_sharp, _) = self.kan_sharp().backward(&f.sharp, &gs.kan)?;
        let (k_gentle, _) = self.kan_gentle().backward(&f.gentle, &gg.kan)?;

        let mut grad = Vec::with_capacity(self.num_params());
        if self.branches.len() == 1 {
            grad.extend(k_sharp.iter().zip(&k_gentle).map(|(a, b)| a + b));
        } else {
            grad.extend(k_sharp);
            grad.extend(k_gentle);
        }
        for m in [&gs.q_proj, &gs.k_proj, &gg.q_proj, &gg.k_proj] {
            grad.extend_from_slice(m.data());
        }
        grad.extend_from_slice(g_head_w.data());
        grad.extend(g_head_b);
        check_vec(&grad, "gradient")?;
        Ok((loss, grad, t.out))
    }

    /// Gradient of the cross-entropy loss in registry order.
    pub fn backward(&self, cloud: &PointCloud, label: usize) -> Result<Vec<f64>> {
        if label >= self.config.num_classes {
            return Err(Error::domain(format!(
                "label {label} out of range for {} classes",
                self.config.num_classes
            )));
        }
        Ok(self.loss_and_grad(&self.features(cloud)?, label)?.1)
    }

    /// Replaces every parameter tensor from `(name, shape, values)` records,
    /// which must follow registry order exactly.
    pub fn load_params(&mut self, records: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let specs = self.param_specs();
        if records.len() != specs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                records.len()
            )));
        }
        for (spec, (name, shape, values)) in specs.iter().zip(records) {
            if &spec.name != name || &spec.shape != shape || values.len() != spec.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {shape:?} does not match expected {} {:?}",
                    spec.name, spec.shape
                )));
            }
        }
        let flat: Vec<f64> = records.iter().flat_map(|r| r.2.iter().copied()).collect();
        self.set_params_flat(&flat)
    }
}
