//! Configuration layering: defaults, then a `key=value` file, then flags.

use std::path::Path;

use clap::Args;
use kangura::model::ModelConfig;
use kangura::training::TrainConfig;

use crate::CliError;

/// Every model and training setting, addressable as `--key value`.
#[derive(Debug, Default, Args)]
pub struct ConfigFlags {
    /// Kernel width of the affinity graph.
    #[arg(long)]
    pub sigma: Option<String>,
    /// Neighbourhood radius of the affinity graph.
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub self_loops: Option<String>,
    /// `random_walk` or `symmetric`.
    #[arg(long)]
    pub adjacency_norm: Option<String>,
    /// Fraction of the spectrum assigned to the gentle band.
    #[arg(long)]
    pub split_fraction: Option<String>,
    /// Comma-separated hidden widths of each KAN stack.
    #[arg(long)]
    pub kan_hidden: Option<String>,
    #[arg(long)]
    pub ka_width: Option<String>,
    #[arg(long)]
    pub grid_g: Option<String>,
    #[arg(long)]
    pub spline_degree: Option<String>,
    #[arg(long)]
    pub grid_extent: Option<String>,
    #[arg(long)]
    pub d_att: Option<String>,
    #[arg(long)]
    pub num_classes: Option<String>,
    #[arg(long)]
    pub in_channels: Option<String>,
    #[arg(long)]
    pub num_points: Option<String>,
    #[arg(long)]
    pub normalize: Option<String>,
    /// Use raw attention scores instead of the softmax.
    #[arg(long)]
    pub ura_raw: Option<String>,
    #[arg(long)]
    pub share_branches: Option<String>,
    /// Seeds both model initialization and training.
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub adam_beta1: Option<String>,
    #[arg(long)]
    pub adam_beta2: Option<String>,
    #[arg(long)]
    pub adam_eps: Option<String>,
    /// Seeds shuffling, augmentation and the validation split only.
    #[arg(long)]
    pub train_seed: Option<String>,
    #[arg(long)]
    pub augment_rotate: Option<String>,
    #[arg(long)]
    pub augment_jitter: Option<String>,
    #[arg(long)]
    pub augment_scale_lo: Option<String>,
    #[arg(long)]
    pub augment_scale_hi: Option<String>,
    #[arg(long)]
    pub val_fraction: Option<String>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("sigma", &self.sigma),
            ("tau", &self.tau),
            ("self_loops", &self.self_loops),
            ("adjacency_norm", &self.adjacency_norm),
            ("split_fraction", &self.split_fraction),
            ("kan_hidden", &self.kan_hidden),
            ("ka_width", &self.ka_width),
            ("grid_g", &self.grid_g),
            ("spline_degree", &self.spline_degree),
            ("grid_extent", &self.grid_extent),
            ("d_att", &self.d_att),
            ("num_classes", &self.num_classes),
            ("in_channels", &self.in_channels),
            ("num_points", &self.num_points),
            ("normalize", &self.normalize),
            ("ura_raw", &self.ura_raw),
            ("share_branches", &self.share_branches),
            ("seed", &self.seed),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("learning_rate", &self.learning_rate),
            ("adam_beta1", &self.adam_beta1),
            ("adam_beta2", &self.adam_beta2),
            ("adam_eps", &self.adam_eps),
            ("train_seed", &self.train_seed),
            ("augment_rotate", &self.augment_rotate),
            ("augment_jitter", &self.augment_jitter),
            ("augment_scale_lo", &self.augment_scale_lo),
            ("augment_scale_hi", &self.augment_scale_hi),
            ("val_fraction", &self.val_fraction),
        ]
    }

    /// Flags that were given on the command line, in declaration order.
    pub fn given(&self) -> Vec<(String, String)> {
        self.pairs()
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected key=value, got {line:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    parse_config_text(&text, &path.display().to_string())
}

/// Applies one setting. `seed` reaches both configurations.
pub fn apply(model: &mut ModelConfig, train: &mut TrainConfig, key: &str, value: &str) -> Result<(), CliError> {
    let usage = |e: kangura::Error| CliError::Usage(e.to_string());
    let in_model = model.set(key, value).map_err(usage)?;
    let in_train = train.set(key, value).map_err(usage)?;
    if in_model || in_train {
        Ok(())
    } else {
        Err(CliError::Usage(format!("unknown configuration key {key:?}")))
    }
}

/// Resolved configuration plus the keys that were set explicitly.
pub struct Resolved {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub explicit: Vec<String>,
}

/// Defaults, overridden by the file, overridden by flags.
pub fn resolve(file: Option<&Path>, flags: &ConfigFlags) -> Result<Resolved, CliError> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    let mut settings = match file {
        Some(p) => read_config_file(p)?,
        None => Vec::new(),
    };
    settings.extend(flags.given());
    let mut explicit = Vec::new();
    for (k, v) in &settings {
        apply(&mut model, &mut train, k, v)?;
        explicit.push(k.clone());
    }
    Ok(Resolved { model, train, explicit })
}
