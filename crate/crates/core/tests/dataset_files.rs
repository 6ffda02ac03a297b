use kangura::datasets::{gen_dataset, write_generated, GenSpec, ShapeFamily, MANIFEST_FILE};
use kangura::pointcloud::read_dataset;

fn small_spec(seed: u64) -> GenSpec {
    GenSpec {
        classes: vec![ShapeFamily::Torus, ShapeFamily::Cube, ShapeFamily::Sphere],
        per_class_train: 4,
        per_class_test: 2,
        imbalance: Some(vec![1.0, 0.5, 2.0]),
        n_points: 32,
        noise_sigma: 0.02,
        seed,
    }
}

#[test]
fn generated_dataset_round_trips_through_files() {
    let spec = small_spec(3);
    let (train, test) = gen_dataset(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_generated(&spec, &train, &test, dir.path()).unwrap();
    let train_back = read_dataset(&dir.path().join("train")).unwrap();
    let test_back = read_dataset(&dir.path().join("test")).unwrap();
    assert_eq!(train_back, train);
    assert_eq!(test_back, test);
    assert_eq!(train_back.class_counts(), vec![4, 2, 8]);
    assert_eq!(test_back.class_counts(), vec![2, 1, 4]);
    assert_eq!(train_back.class_names, vec!["torus", "cube", "sphere"]);
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(manifest.contains("imbalance=1,0.5,2\n"), "{manifest}");
    assert!(manifest.contains("train_counts=4,2,8\n"));
}

#[test]
fn same_seed_writes_identical_bytes() {
    let spec = small_spec(11);
    let write = || {
        let (train, test) = gen_dataset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_generated(&spec, &train, &test, dir.path()).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        for sub in ["train", "test"] {
            let mut entries: Vec<_> = std::fs::read_dir(dir.path().join(sub))
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            entries.sort();
            for p in entries {
                files.push((
                    format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
        files
    };
    assert_eq!(write(), write());
    let (a, _) = gen_dataset(&spec).unwrap();
    let (b, _) = gen_dataset(&small_spec(12)).unwrap();
    assert_ne!(a, b);
}
