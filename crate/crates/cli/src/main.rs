//! `kangura`: generate synthetic data, train, evaluate, predict and check
//! gradients.
//!
//! Exit codes: 0 success, 1 runtime or data failure, 2 usage error.

mod overrides;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kangura::datasets::{gen_dataset, write_generated, GenSpec, ShapeFamily};
use kangura::pointcloud::{read_dataset, read_pts, Dataset};
use kangura::training::{
    decode_checkpoint, dump_checkpoint, evaluate, grad_check, history_csv, prepare_seed, save_checkpoint_with_meta,
    stratified_split, tiny_gradcheck_setup, train, Checkpoint, Metrics,
};
use serde_json::json;

use overrides::{resolve, ConfigFlags};

/// Gradient checks pass below this maximum relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(kangura::Error),
}

impl From<kangura::Error> for CliError {
    fn from(e: kangura::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "kangura",
    version,
    about = "Point-cloud classification with spectral disentanglement and KAN layers"
)]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic shape dataset with train/ and test/ splits.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint and a history CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labelled dataset.
    Eval(EvalArgs),
    /// Classify one point cloud file.
    Predict(PredictArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Print a checkpoint's configuration and parameter summary.
    Dump(DumpArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated shape families: sphere, cube, torus, cylinder.
    #[arg(long, default_value = "sphere,cube,torus,cylinder")]
    classes: String,
    #[arg(long, default_value_t = 200)]
    train_per_class: usize,
    #[arg(long, default_value_t = 50)]
    test_per_class: usize,
    /// Comma-separated per-class count multipliers.
    #[arg(long)]
    imbalance: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    points: usize,
    /// Standard deviation of the Gaussian surface noise.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory; its `train/` subdirectory is used when present.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Flat `key=value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// History CSV path (default: the checkpoint path with a `.csv` extension).
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory; its `test/` subdirectory is used when present.
    #[arg(long)]
    data: PathBuf,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 8)]
    points: usize,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[arg(long)]
    model: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("usage error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Dump(a) => cmd_dump(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Runtime(_) => 1,
            })
        }
    }
}

fn usage(e: kangura::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("invalid entry {v:?} in --{flag}")))
        })
        .collect()
}

fn cmd_gen_data(a: GenDataArgs) -> CliResult<ExitCode> {
    let classes = a
        .classes
        .split(',')
        .map(ShapeFamily::parse)
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    let imbalance = a.imbalance.as_deref().map(|s| parse_list("imbalance", s)).transpose()?;
    let spec = GenSpec {
        classes,
        per_class_train: a.train_per_class,
        per_class_test: a.test_per_class,
        imbalance,
        n_points: a.points,
        noise_sigma: a.noise,
        seed: a.seed,
    };
    spec.validate().map_err(usage)?;
    let (train_set, test_set) = gen_dataset(&spec)?;
    write_generated(&spec, &train_set, &test_set, &a.out)?;
    println!(
        "wrote {} training and {} test clouds to {}",
        train_set.len(),
        test_set.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// `dir/sub` when it exists, otherwise `dir`.
fn dataset_dir(dir: &Path, sub: &str) -> PathBuf {
    let nested = dir.join(sub);
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn cmd_train(a: TrainArgs) -> CliResult<ExitCode> {
    let mut cfg = resolve(a.config.as_deref(), &a.flags)?;
    let data = read_dataset(&dataset_dir(&a.data, "train"))?;
    let explicit = |k: &str| cfg.explicit.iter().any(|e| e == k);
    if !explicit("num_classes") {
        cfg.model.num_classes = data.num_classes();
    }
    if !explicit("in_channels") {
        if let Some(c) = data.clouds.first() {
            cfg.model.in_channels = c.channels();
        }
    }
    cfg.model.validate().map_err(usage)?;
    cfg.train.validate().map_err(usage)?;
    if cfg.train.val_fraction <= 0.0 {
        return Err(CliError::Usage("val_fraction must be positive".into()));
    }
    let model = kangura::model::Model::new(cfg.model.clone())?;
    let (train_set, val_set) = stratified_split(&data, cfg.train.val_fraction, cfg.train.seed)?;
    let history_path = a.history.clone().unwrap_or_else(|| a.out.with_extension("csv"));

    let (report, failure) = match train(&model, &train_set, &val_set, &cfg.train) {
        Ok(r) => (Some(r), None),
        Err(f) => (None, Some(f)),
    };
    let (best, history) = match (&report, &failure) {
        (Some(r), _) => (&r.model, &r.history),
        (_, Some(f)) => (&f.last_good, &f.history),
        _ => unreachable!(),
    };
    let mut meta = vec![("class_names".to_string(), data.class_names.join(","))];
    meta.extend(cfg.train.to_pairs().into_iter().map(|(k, v)| (format!("train.{k}"), v)));
    if let Some(r) = &report {
        meta.push(("best_epoch".into(), r.best_epoch.to_string()));
    }
    save_checkpoint_with_meta(best, &meta, &a.out)?;
    std::fs::write(&history_path, history_csv(history)).map_err(|e| kangura::Error::Io {
        path: history_path.clone(),
        source: e,
    })?;
    if let Some(f) = failure {
        eprintln!("last good checkpoint written to {}", a.out.display());
        return Err(CliError::Runtime(f.error));
    }
    let r = report.expect("training succeeded");
    let best_val = r
        .history
        .iter()
        .find(|h| h.epoch == r.best_epoch)
        .map_or(0.0, |h| h.val.accuracy);
    println!("best_epoch={}", r.best_epoch);
    println!("val_accuracy={best_val}");
    Ok(ExitCode::SUCCESS)
}

fn load(path: &Path) -> CliResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| kangura::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(decode_checkpoint(&bytes)?)
}

fn class_names(ckpt: &Checkpoint) -> Vec<String> {
    match ckpt.meta("class_names") {
        Some(s) if !s.is_empty() => s.split(',').map(str::to_string).collect(),
        _ => (0..ckpt.model.config().num_classes)
            .map(|i| format!("class{i}"))
            .collect(),
    }
}

fn metrics_json(m: &Metrics, names: &[String]) -> serde_json::Value {
    let per_class: Vec<_> = m
        .per_class
        .iter()
        .zip(names)
        .map(|(c, name)| json!({"class": name, "precision": c.precision, "recall": c.recall, "f1": c.f1}))
        .collect();
    json!({
        "accuracy": m.accuracy,
        "macro_f1": m.macro_f1(),
        "per_class": per_class,
        "confusion": m.confusion,
    })
}

fn cmd_eval(a: EvalArgs) -> CliResult<ExitCode> {
    let ckpt = load(&a.model)?;
    let data: Dataset = read_dataset(&dataset_dir(&a.data, "test"))?;
    let names = class_names(&ckpt);
    if data.class_names != names {
        return Err(kangura::Error::Schema(format!(
            "dataset classes {:?} do not match the model's {:?}",
            data.class_names, names
        ))
        .into());
    }
    let m = evaluate(&ckpt.model, &data)?;
    if a.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&metrics_json(&m, &names)).expect("valid JSON")
        );
        return Ok(ExitCode::SUCCESS);
    }
    println!("accuracy={}", m.accuracy);
    println!("macro_f1={}", m.macro_f1());
    println!("{:<12} {:>10} {:>10} {:>10}", "class", "precision", "recall", "f1");
    for (c, name) in m.per_class.iter().zip(&names) {
        println!("{name:<12} {:>10.6} {:>10.6} {:>10.6}", c.precision, c.recall, c.f1);
    }
    println!("confusion (rows: true, columns: predicted)");
    for row in &m.confusion {
        println!("{}", row.iter().map(|v| format!("{v:>6}")).collect::<String>());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(a: PredictArgs) -> CliResult<ExitCode> {
    let ckpt = load(&a.model)?;
    let cloud = read_pts(&a.input)?;
    let model = &ckpt.model;
    let prepared = model.prepare(&cloud, prepare_seed(model, 0))?;
    let probs = model.predict_proba(&prepared)?;
    let names = class_names(&ckpt);
    let best = kangura::training::argmax(&probs);
    println!("class={}", names[best]);
    for (name, p) in names.iter().zip(&probs) {
        println!("{name}={p:.6}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult<ExitCode> {
    if !(a.h > 0.0 && a.h.is_finite()) {
        return Err(CliError::Usage(format!("--h must be positive, got {}", a.h)));
    }
    if a.points < 2 {
        return Err(CliError::Usage(format!(
            "--points must be at least 2, got {}",
            a.points
        )));
    }
    let (model, cloud, label) = tiny_gradcheck_setup(a.seed, a.points)?;
    let r = grad_check(&model, &cloud, label, a.h)?;
    println!("parameters={}", r.entries.len());
    println!("h={:e}", r.h);
    println!("double_max_rel_error={:e}", r.double.max);
    println!("double_mean_rel_error={:e}", r.double.mean);
    println!("max_rel_error={:e}", r.extended.max);
    println!("mean_rel_error={:e}", r.extended.mean);
    println!("worst={}", r.extended.worst);
    let pass = r.extended.max < GRADCHECK_TOLERANCE;
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_dump(a: DumpArgs) -> CliResult<ExitCode> {
    let bytes = std::fs::read(&a.model).map_err(|e| kangura::Error::Io {
        path: a.model.clone(),
        source: e,
    })?;
    print!("{}", dump_checkpoint(&bytes)?);
    Ok(ExitCode::SUCCESS)
}
