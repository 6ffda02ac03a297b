use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kangura::pointcloud::read_dataset;
use kangura::training::{evaluate, load_checkpoint};

fn kangura(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kangura"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_small(dir: &Path, seed: &str) -> Output {
    kangura(&[
        "gen-data",
        "--out",
        p(dir),
        "--classes",
        "sphere,cube",
        "--train-per-class",
        "6",
        "--test-per-class",
        "3",
        "--seed",
        seed,
        "--points",
        "24",
    ])
}

fn train_small(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        p(data),
        "--out",
        p(out),
        "--epochs",
        "2",
        "--num-points",
        "24",
        "--batch-size",
        "4",
        "--seed",
        "5",
    ];
    args.extend_from_slice(extra);
    kangura(&args)
}

/// A generated dataset and a model trained on it.
fn trained() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&gen_small(&data, "1")), 0);
    let model = dir.path().join("model.knp");
    let o = train_small(&data, &model, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (dir, data, model)
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_writes_splits_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = gen_small(&out, "4");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("train/classes.txt").is_file());
    assert!(out.join("test/classes.txt").is_file());
    assert!(out.join("manifest.txt").is_file());
    assert_eq!(read_dataset(&out.join("train")).unwrap().class_counts(), vec![6, 6]);
}

#[test]
fn gen_data_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&gen_small(&a, "9")), 0);
    assert_eq!(code(&gen_small(&b, "9")), 0);
    assert_eq!(read_tree(&a), read_tree(&b));
}

#[test]
fn gen_data_rejects_unknown_class() {
    let dir = tempfile::tempdir().unwrap();
    let o = kangura(&["gen-data", "--out", p(dir.path()), "--classes", "sphere,pyramid"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("pyramid"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&kangura(&["train", "--out", "m.knp"])), 2);
    assert_eq!(
        code(&kangura(&["train", "--data", "d", "--out", "m", "--no-such-flag", "1"])),
        2
    );
    assert_eq!(code(&kangura(&["frobnicate"])), 2);
    assert_eq!(code(&kangura(&["gradcheck", "--h", "0"])), 2);
}

#[test]
fn train_writes_checkpoint_and_history_reproducibly() {
    let (dir, data, model) = trained();
    let history = model.with_extension("csv");
    let csv = std::fs::read_to_string(&history).unwrap();
    assert!(csv.starts_with("epoch,train_loss,val_accuracy\n"));
    assert_eq!(csv.lines().count(), 3);

    let again = dir.path().join("again.knp");
    let o = train_small(&data, &again, &[]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().any(|l| l.starts_with("val_accuracy=")));
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(csv, std::fs::read_to_string(again.with_extension("csv")).unwrap());

    let ckpt = load_checkpoint(&model).unwrap();
    assert_eq!(ckpt.meta("class_names"), Some("sphere,cube"));
    assert_eq!(ckpt.meta("train.epochs"), Some("2"));
    assert_eq!(ckpt.model.config().num_classes, 2);
}

#[test]
fn train_reports_dataset_errors_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("broken");
    std::fs::create_dir_all(&data).unwrap();
    std::fs::write(data.join("classes.txt"), "a\nb\n").unwrap();
    std::fs::write(data.join("000000_a.pts"), "3 3 0\n1 2\n").unwrap();
    let o = train_small(&data, &dir.path().join("m.knp"), &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("000000_a.pts"), "{}", stderr(&o));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&gen_small(&data, "2")), 0);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nepochs=1\ngrid_g=5\n").unwrap();
    let model = dir.path().join("m.knp");
    let o = train_small(&data, &model, &["--config", p(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = load_checkpoint(&model).unwrap();
    // --epochs 2 on the command line beats epochs=1 in the file
    assert_eq!(ckpt.meta("train.epochs"), Some("2"));
    assert_eq!(ckpt.model.config().grid_g, 5);

    std::fs::write(&cfg, "colour=red\n").unwrap();
    assert_eq!(code(&train_small(&data, &model, &["--config", p(&cfg)])), 2);
}

#[test]
fn eval_matches_library_evaluation() {
    let (_dir, data, model) = trained();
    let o = kangura(&["eval", "--model", p(&model), "--data", p(&data), "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let ckpt = load_checkpoint(&model).unwrap();
    let m = evaluate(&ckpt.model, &read_dataset(&data.join("test")).unwrap()).unwrap();
    assert_eq!(v["accuracy"].as_f64().unwrap(), m.accuracy);
    for (c, cm) in m.per_class.iter().enumerate() {
        assert_eq!(v["per_class"][c]["precision"].as_f64().unwrap(), cm.precision);
        assert_eq!(v["per_class"][c]["recall"].as_f64().unwrap(), cm.recall);
        assert_eq!(v["per_class"][c]["f1"].as_f64().unwrap(), cm.f1);
    }
    let confusion: Vec<Vec<usize>> = serde_json::from_value(v["confusion"].clone()).unwrap();
    assert_eq!(confusion, m.confusion);

    let text = stdout(&kangura(&["eval", "--model", p(&model), "--data", p(&data)]));
    assert!(text.contains(&format!("accuracy={}", m.accuracy)));
    assert!(text.contains("confusion"));
}

#[test]
fn eval_rejects_bad_checkpoints() {
    let (dir, data, model) = trained();
    let mut bytes = std::fs::read(&model).unwrap();
    let corrupt = dir.path().join("corrupt.knp");
    std::fs::write(&corrupt, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&kangura(&["eval", "--model", p(&corrupt), "--data", p(&data)])), 1);

    bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
    let future = dir.path().join("future.knp");
    std::fs::write(&future, &bytes).unwrap();
    let o = kangura(&["eval", "--model", p(&future), "--data", p(&data)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains('7') && stderr(&o).contains('1'), "{}", stderr(&o));
}

#[test]
fn predict_prints_normalized_probabilities() {
    let (dir, data, model) = trained();
    let input = std::fs::read_dir(data.join("test"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "pts"))
        .unwrap();
    let args = ["predict", "--model", p(&model), "--input", p(&input)];
    let o = kangura(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let class = out.lines().next().unwrap().strip_prefix("class=").unwrap().to_string();
    assert!(class == "sphere" || class == "cube");
    let probs: Vec<f64> = out
        .lines()
        .skip(1)
        .map(|l| l.split_once('=').unwrap().1.parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 2);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert_eq!(stdout(&kangura(&args)), out);

    let tiny = dir.path().join("tiny.pts");
    std::fs::write(&tiny, "1 3 0\n0 0 0\n").unwrap();
    let o = kangura(&["predict", "--model", p(&model), "--input", p(&tiny)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("tiny.pts:1"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_is_deterministic() {
    let o = kangura(&["gradcheck", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    let max: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("max_rel_error="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(max < 1e-4);
    assert_eq!(stdout(&kangura(&["gradcheck", "--seed", "3"])), out);
}

#[test]
fn dump_lists_parameters() {
    let (_dir, _data, model) = trained();
    let o = kangura(&["dump", "--model", p(&model)]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.starts_with("format_version=1\n"));
    assert!(out.contains("head.bias [2]"));
}
