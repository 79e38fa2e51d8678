//! End-to-end command tests driving the real binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rfembed"))
}

fn data_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn rfembed");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fit_iris(dir: &Path, trees: u32, seed: u64) -> String {
    run_ok(bin().args([
        "fit",
        "--data",
        data_path("iris.csv").to_str().unwrap(),
        "--label",
        "species",
        "--trees",
        &trees.to_string(),
        "--seed",
        &seed.to_string(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]))
}

#[test]
fn fit_writes_artifacts_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = fit_iris(dir.path(), 100, 7);
    assert!(out.contains("OOB accuracy"));
    let forest = dir.path().join("forest.json");
    let prox = dir.path().join("proximities.csv");
    assert!(forest.exists() && prox.exists());

    let first = std::fs::read(&forest).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    fit_iris(dir2.path(), 100, 7);
    let second = std::fs::read(dir2.path().join("forest.json")).unwrap();
    assert_eq!(first, second, "same seed must give a byte-identical forest file");
}

#[test]
fn fit_rejects_zero_trees_with_usage_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "fit",
            "--data",
            data_path("iris.csv").to_str().unwrap(),
            "--label",
            "species",
            "--trees",
            "0",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_file_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "fit",
            "--data",
            "/nonexistent/never.csv",
            "--label",
            "species",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn embed_records_t_for_fixed_and_auto() {
    let dir = tempfile::tempdir().unwrap();
    fit_iris(dir.path(), 100, 3);
    let forest = dir.path().join("forest.json");

    for t_flag in ["8", "auto"] {
        let sub = dir.path().join(format!("t_{t_flag}"));
        run_ok(bin().args([
            "embed",
            "--forest",
            forest.to_str().unwrap(),
            "--k",
            "2",
            "--t",
            t_flag,
            "--seed",
            "1",
            "--out-dir",
            sub.to_str().unwrap(),
        ]));
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(sub.join("embedding.meta.json")).unwrap())
                .unwrap();
        let t = meta["t"].as_u64().unwrap();
        if t_flag == "8" {
            assert_eq!(t, 8);
        } else {
            assert!(t >= 1);
        }
        let csv_text = std::fs::read_to_string(sub.join("embedding.csv")).unwrap();
        let mut lines = csv_text.lines();
        assert_eq!(lines.next().unwrap(), "dim_0,dim_1,index");
        assert_eq!(lines.count(), 150);
    }
}

#[test]
fn embed_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    fit_iris(dir.path(), 60, 11);
    let forest = dir.path().join("forest.json");
    let run = |out: &Path| {
        run_ok(bin().args([
            "embed",
            "--forest",
            forest.to_str().unwrap(),
            "--t",
            "4",
            "--seed",
            "9",
            "--out-dir",
            out.to_str().unwrap(),
        ]));
        std::fs::read(out.join("embedding.csv")).unwrap()
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));
    assert_eq!(a, b);
}

fn train_model(dir: &Path, variant: &str, extra: &[&str]) {
    let mut args = vec![
        "train-ae".to_string(),
        "--data".into(),
        data_path("iris.csv").to_str().unwrap().into(),
        "--label".into(),
        "species".into(),
        "--forest".into(),
        dir.join("forest.json").to_str().unwrap().into(),
        "--embedding".into(),
        dir.join("embedding.csv").to_str().unwrap().into(),
        "--variant".into(),
        variant.into(),
        "--lambda".into(),
        "10".into(),
        "--epochs".into(),
        "30".into(),
        "--hidden".into(),
        "32,16".into(),
        "--seed".into(),
        "2".into(),
        "--out-dir".into(),
        dir.to_str().unwrap().into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    run_ok(bin().args(&args));
}

fn prepare_trained(dir: &Path, variant: &str, extra: &[&str]) {
    fit_iris(dir, 80, 5);
    run_ok(bin().args([
        "embed",
        "--forest",
        dir.join("forest.json").to_str().unwrap(),
        "--t",
        "4",
        "--seed",
        "1",
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
    train_model(dir, variant, extra);
}

#[test]
fn train_ae_records_lambda_in_the_model_file() {
    let dir = tempfile::tempdir().unwrap();
    prepare_trained(dir.path(), "rf-prn", &[]);
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("model.json")).unwrap())
            .unwrap();
    assert_eq!(model["variant"], "rf-prn");
    assert_eq!(model["lambda"], 10.0);
    assert_eq!(model["format_version"], 1);
}

#[test]
fn extend_on_training_file_matches_training_latents() {
    let dir = tempfile::tempdir().unwrap();
    prepare_trained(dir.path(), "rf-grae", &[]);
    run_ok(bin().args([
        "extend",
        "--model",
        dir.path().join("model.json").to_str().unwrap(),
        "--forest",
        dir.path().join("forest.json").to_str().unwrap(),
        "--input",
        data_path("iris.csv").to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));

    // Same latents through the library path.
    let (model, _) =
        rfembed_core::ae::AEModel::load(dir.path().join("model.json")).unwrap();
    let ds = rfembed_core::data::load_csv(data_path("iris.csv"), "species").unwrap();
    let scaled = model.scaler.as_ref().unwrap().transform(ds.features.view()).unwrap();
    let expected = model.encode(scaled.view()).unwrap();

    let (coords, _) =
        rfembed_core::embed::read_embedding_csv(dir.path().join("extension.csv")).unwrap();
    assert_eq!(coords.nrows(), 150);
    let max = (&coords - &expected).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max < 1e-12, "extension differs from training latents by {max}");
}

#[test]
fn extend_accepts_a_csv_without_the_label_column() {
    let dir = tempfile::tempdir().unwrap();
    prepare_trained(dir.path(), "rf-prn-pro", &["--proto-frac", "0.2"]);

    // Strip the label column entirely.
    let full = std::fs::read_to_string(data_path("iris.csv")).unwrap();
    let unlabeled: Vec<String> = full
        .lines()
        .take(21)
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            cells[..cells.len() - 1].join(",")
        })
        .collect();
    let input = dir.path().join("unlabeled.csv");
    std::fs::write(&input, unlabeled.join("\n")).unwrap();

    run_ok(bin().args([
        "extend",
        "--model",
        dir.path().join("model.json").to_str().unwrap(),
        "--forest",
        dir.path().join("forest.json").to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));
    let (coords, _) =
        rfembed_core::embed::read_embedding_csv(dir.path().join("extension.csv")).unwrap();
    assert_eq!(coords.nrows(), 20);
    assert_eq!(coords.ncols(), 2);
}

#[test]
fn commands_do_not_mutate_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let before = std::fs::read(data_path("iris.csv")).unwrap();
    fit_iris(dir.path(), 50, 1);
    let after = std::fs::read(data_path("iris.csv")).unwrap();
    assert_eq!(before, after);
}

fn small_benchmark_config(dir: &Path, variants: &[&str], n_seeds: usize) -> PathBuf {
    let cfg = serde_json::json!({
        "datasets": [
            { "name": "iris", "path": data_path("iris.csv").to_str().unwrap(), "label": "species" }
        ],
        "variants": variants,
        "lambdas": [10],
        "fractions": [0.2],
        "n_seeds": n_seeds,
        "base_seed": 5,
        "forest": { "n_trees": 60 },
        "embed": { "t": { "fixed": 3 }, "mds_iters": 100 },
        "ae": { "hidden": [16], "epochs": 10, "batch_size": 32 }
    });
    let path = dir.join("bench.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn benchmark_single_cell_and_dry_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_benchmark_config(dir.path(), &["rf-prn"], 1);

    let dry = run_ok(bin().args([
        "benchmark",
        "--config",
        cfg.to_str().unwrap(),
        "--dry-run",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));
    assert!(dry.contains("1 cells planned"));
    assert!(!dir.path().join("cells.csv").exists(), "dry run must not write outputs");

    let out = run_ok(bin().args([
        "benchmark",
        "--config",
        cfg.to_str().unwrap(),
        "--jobs",
        "1",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));
    assert!(out.contains("RF-PRN"));
    let cells = std::fs::read_to_string(dir.path().join("cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 2); // header + one cell
    assert!(dir.path().join("aggregates.json").exists());
    assert!(dir.path().join("table.txt").exists());
}

#[test]
fn benchmark_runs_all_five_variants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_benchmark_config(
        dir.path(),
        &["rf-grae", "rf-prox-in", "rf-prox-reg", "rf-prn", "rf-prn-pro"],
        1,
    );
    let out = run_ok(bin().args([
        "benchmark",
        "--config",
        cfg.to_str().unwrap(),
        "--jobs",
        "2",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));
    for name in ["RF-GRAE", "RF-PROX-IN", "RF-PROX-REG", "RF-PRN", "RF-PRN-PRO"] {
        assert!(out.contains(name), "table is missing {name}:\n{out}");
    }
    let report =
        rfembed_core::eval::ExperimentReport::read_cells_csv(dir.path().join("cells.csv"))
            .unwrap();
    report.validate().unwrap();
}
