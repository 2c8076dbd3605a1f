use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cal_synthdata::{load_bundle, DatasetBundle};
use tempfile::TempDir;

fn cal(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cal"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = cal(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a command expected to fail; returns its exit code and standard error.
fn fails(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = cal(args, cwd);
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

const GEN: &[&str] = &[
    "gen",
    "--classes",
    "4",
    "--samples-per-class",
    "5",
    "--test-samples-per-class",
    "3",
    "--image-size",
    "16",
    "--rho",
    "0.5",
    "--seed",
    "7",
];
const TRAIN: &[&str] = &[
    "train", "--data", "d", "--epochs", "3", "--depth", "2", "--heads", "4", "--batch", "5",
];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_with(base: &[&str], extra: &[&str], cwd: &Path) -> String {
    let argv = with(base, extra);
    ok(&argv.iter().map(String::as_str).collect::<Vec<_>>(), cwd)
}

fn fails_with(base: &[&str], extra: &[&str], cwd: &Path) -> (i32, String) {
    let argv = with(base, extra);
    fails(&argv.iter().map(String::as_str).collect::<Vec<_>>(), cwd)
}

/// A temp dir holding a small dataset in `d/`.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    run_with(GEN, &["--out", "d"], dir.path());
    dir
}

/// A temp dir holding the dataset in `d/` and a trained checkpoint in `m/`.
fn trained() -> TempDir {
    let dir = workspace();
    run_with(TRAIN, &["--out", "m"], dir.path());
    dir
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn gen_writes_files_and_echoes_flags() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        &[
            "gen",
            "--classes",
            "20",
            "--rho",
            "0.9",
            "--seed",
            "7",
            "--samples-per-class",
            "2",
            "--test-samples-per-class",
            "1",
            "--out",
            "d/",
        ],
        dir.path(),
    );
    let d = dir.path().join("d");
    for f in ["manifest.txt", "train.bin", "test.bin", "gen.cfg"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    let manifest = fs::read_to_string(d.join("manifest.txt")).unwrap();
    for line in [
        "num_classes=20",
        "bias_strength=0.9",
        "seed=7",
        "train=40",
        "test=20",
    ] {
        assert!(
            manifest.lines().any(|l| l == line),
            "{line} missing from\n{manifest}"
        );
    }
    for part in ["train 40", "test 20", "rho 0.9", "seed 7"] {
        assert!(stdout.contains(part), "{stdout}");
    }
}

#[test]
fn gen_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    run_with(GEN, &["--out", "a"], dir.path());
    run_with(GEN, &["--out", "b"], dir.path());
    let (a, b) = (files(&dir.path().join("a")), files(&dir.path().join("b")));
    assert_eq!(a.len(), 4);
    assert_eq!(a, b);
    run_with(GEN, &["--out", "c", "--seed", "8"], dir.path());
    assert_ne!(a["train.bin"], files(&dir.path().join("c"))["train.bin"]);
}

#[test]
fn gen_retrieval_mode_writes_query_and_gallery() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run_with(
        GEN,
        &[
            "--mode",
            "retrieval",
            "--identities",
            "6",
            "--views",
            "3",
            "--out",
            "r",
        ],
        dir.path(),
    );
    assert!(stdout.starts_with("retrieval"), "{stdout}");
    let bundle = load_bundle(&dir.path().join("r")).unwrap();
    assert_eq!(bundle.mode(), "retrieval");
}

#[test]
fn gen_rejects_out_of_range_bias() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = fails(&["gen", "--rho", "1.5", "--out", "d"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("usage") && err.contains("1.5"), "{err}");
    assert!(!dir.path().join("d").exists());
}

#[test]
fn gen_into_an_unwritable_path_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("file"), b"x").unwrap();
    let (code, err) = fails_with(GEN, &["--out", "file/d"], dir.path());
    assert_ne!(code, 0);
    assert!(err.contains("file/d"), "{err}");
}

#[test]
fn missing_required_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fails(&["gen"], dir.path()).0, 2);
    assert_eq!(fails(&["train", "--out", "m"], dir.path()).0, 2);
    assert_eq!(fails(&["eval", "--data", "d"], dir.path()).0, 2);
    assert_eq!(fails(&["gen", "--classes", "many"], dir.path()).0, 2);
    assert_eq!(fails(&["frobnicate"], dir.path()).0, 2);
}

#[test]
fn train_writes_checkpoint_and_one_row_per_epoch() {
    let dir = workspace();
    let stdout = run_with(
        TRAIN,
        &[
            "--objective",
            "cal",
            "--strategy",
            "random",
            "--epochs",
            "20",
            "--out",
            "m",
        ],
        dir.path(),
    );
    let m = dir.path().join("m");
    for f in [
        "model.manifest",
        "model.bin",
        "metrics.csv",
        "summary.csv",
        "train.cfg",
    ] {
        assert!(m.join(f).is_file(), "{f}");
    }
    let rows = csv_rows(&fs::read_to_string(m.join("metrics.csv")).unwrap());
    assert_eq!(rows.len(), 21);
    assert_eq!(rows[20][0], "20");
    assert!(stdout.contains("trained 20 epochs in"), "{stdout}");
    let summary = fs::read_to_string(m.join("summary.csv")).unwrap();
    assert!(!summary.contains("trained"), "wall clock stays on stdout");
}

#[test]
fn zero_lambda_replays_the_baseline_loss_column() {
    let dir = workspace();
    run_with(
        TRAIN,
        &[
            "--objective",
            "cal",
            "--lambda-effect",
            "0",
            "--seed",
            "4",
            "--out",
            "cal",
        ],
        dir.path(),
    );
    run_with(
        TRAIN,
        &["--objective", "baseline", "--seed", "4", "--out", "base"],
        dir.path(),
    );
    let loss = |name: &str| -> Vec<String> {
        let text = fs::read_to_string(dir.path().join(name).join("metrics.csv")).unwrap();
        csv_rows(&text).into_iter().map(|r| r[2].clone()).collect()
    };
    assert_eq!(loss("cal"), loss("base"));
    let (a, b) = (
        files(&dir.path().join("cal")),
        files(&dir.path().join("base")),
    );
    assert_eq!(a["model.bin"], b["model.bin"]);
}

#[test]
fn shuffle_with_batch_one_names_the_constraint() {
    let dir = workspace();
    let (code, err) = fails_with(
        TRAIN,
        &[
            "--objective",
            "cal",
            "--strategy",
            "shuffle",
            "--batch",
            "1",
            "--out",
            "m",
        ],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(err.contains("N >= 2"), "{err}");
    assert!(
        !dir.path().join("m").exists(),
        "validation precedes any output"
    );
}

#[test]
fn train_without_a_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = fails_with(TRAIN, &["--out", "m"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("no dataset at d"), "{err}");
}

#[test]
fn train_rejects_a_depth_the_images_cannot_support() {
    let dir = workspace();
    run_with(GEN, &["--image-size", "24", "--out", "d24"], dir.path());
    let (code, err) = fails_with(
        TRAIN,
        &["--data", "d24", "--depth", "4", "--out", "m"],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(err.contains("divisible"), "{err}");
}

#[test]
fn divergence_exits_3_naming_the_step() {
    let dir = workspace();
    let (code, err) = fails_with(TRAIN, &["--lr", "1e200", "--out", "m"], dir.path());
    assert_eq!(code, 3);
    assert!(err.contains("diverged at step"), "{err}");
}

#[test]
fn train_is_byte_identical_on_rerun() {
    let dir = workspace();
    for out in ["a", "b"] {
        run_with(TRAIN, &["--objective", "cal", "--out", out], dir.path());
    }
    let a = files(&dir.path().join("a"));
    assert_eq!(a.len(), 5);
    assert_eq!(a, files(&dir.path().join("b")));
}

#[test]
fn config_file_drives_train_and_flags_win() {
    let dir = workspace();
    fs::write(
        dir.path().join("run.cfg"),
        "data=d\nepochs=2\ndepth=2\nheads=3\nbatch_size=6\nobjective=entropy\n",
    )
    .unwrap();
    ok(
        &[
            "train", "--config", "run.cfg", "--epochs", "4", "--out", "m",
        ],
        dir.path(),
    );
    let echo = fs::read_to_string(dir.path().join("m/train.cfg")).unwrap();
    for line in ["epochs=4", "heads=3", "objective=entropy", "data=d"] {
        assert!(
            echo.lines().any(|l| l == line),
            "{line} missing from\n{echo}"
        );
    }
    let rows = fs::read_to_string(dir.path().join("m/metrics.csv")).unwrap();
    assert_eq!(rows.lines().count(), 5);
    ok(
        &["train", "--config", "m/train.cfg", "--out", "again"],
        dir.path(),
    );
    assert_eq!(
        files(&dir.path().join("m")),
        files(&dir.path().join("again"))
    );
}

#[test]
fn eval_reports_rates_and_is_repeatable() {
    let dir = trained();
    let first = ok(
        &["eval", "--checkpoint", "m", "--data", "d", "--threads", "2"],
        dir.path(),
    );
    let second = ok(
        &["eval", "--checkpoint", "m", "--data", "d", "--threads", "1"],
        dir.path(),
    );
    assert_eq!(first, second);
    let rows = csv_rows(&first);
    assert_eq!(rows[0], vec!["mode classification"]);
    let (header, values) = (&rows[1], &rows[2]);
    for name in ["top1_accuracy", "attention_miou"] {
        let v: f64 = values[header.iter().position(|h| h == name).unwrap()]
            .parse()
            .unwrap();
        assert!((0.0..=1.0).contains(&v), "{name} = {v}");
    }
    let written = fs::read_to_string(dir.path().join("m/eval_summary.csv")).unwrap();
    assert!(first.ends_with(&written));
    let train_summary = fs::read_to_string(dir.path().join("m/summary.csv")).unwrap();
    assert_eq!(
        written, train_summary,
        "eval reproduces the training-time evaluation"
    );
}

#[test]
fn eval_mode_must_match_the_dataset() {
    let dir = trained();
    let (code, err) = fails(
        &[
            "eval",
            "--checkpoint",
            "m",
            "--data",
            "d",
            "--mode",
            "retrieval",
        ],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(err.contains("classification"), "{err}");
}

#[test]
fn eval_names_both_shapes_on_mismatch() {
    let dir = trained();
    run_with(GEN, &["--classes", "5", "--out", "d5"], dir.path());
    let (code, err) = fails(&["eval", "--checkpoint", "m", "--data", "d5"], dir.path());
    assert_eq!(code, 2);
    assert!(
        err.contains("classes 4") && err.contains("classes 5"),
        "{err}"
    );
    run_with(TRAIN, &["--depth", "4", "--out", "m4"], dir.path());
    run_with(GEN, &["--image-size", "24", "--out", "d24"], dir.path());
    let (code, err) = fails(&["eval", "--checkpoint", "m4", "--data", "d24"], dir.path());
    assert_eq!(code, 2);
    assert!(
        err.contains("divisible by 16") && err.contains("3x24x24"),
        "{err}"
    );
}

#[test]
fn eval_without_a_checkpoint_exits_2() {
    let dir = workspace();
    let (code, err) = fails(
        &["eval", "--checkpoint", "nowhere", "--data", "d"],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(err.contains("no checkpoint"), "{err}");
}

#[test]
fn retrieval_pipeline_reports_cmc_and_map() {
    let dir = tempfile::tempdir().unwrap();
    run_with(
        GEN,
        &[
            "--mode",
            "retrieval",
            "--identities",
            "8",
            "--views",
            "3",
            "--out",
            "r",
        ],
        dir.path(),
    );
    ok(
        &[
            "train", "--data", "r", "--epochs", "2", "--depth", "2", "--heads", "4", "--batch",
            "6", "--out", "m",
        ],
        dir.path(),
    );
    let stdout = ok(
        &[
            "eval",
            "--checkpoint",
            "m",
            "--data",
            "r",
            "--mode",
            "retrieval",
        ],
        dir.path(),
    );
    let rows = csv_rows(&stdout);
    assert_eq!(rows[0], vec!["mode retrieval"]);
    assert_eq!(rows[2][0], "");
    for v in &rows[2][2..] {
        assert!((0.0..=1.0).contains(&v.parse::<f64>().unwrap()), "{stdout}");
    }
}

/// Minimal independent P6 reader: header tokens, then raw RGB bytes.
fn read_p6(bytes: &[u8]) -> (usize, usize, Vec<u8>) {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).unwrap().to_string());
    }
    assert_eq!(fields[0], "P6");
    assert_eq!(fields[3], "255");
    let (w, h): (usize, usize) = (fields[1].parse().unwrap(), fields[2].parse().unwrap());
    let pixels = bytes[i + 1..].to_vec();
    assert_eq!(pixels.len(), 3 * w * h);
    (w, h, pixels)
}

#[test]
fn visualize_writes_images_that_round_trip() {
    let dir = trained();
    ok(
        &[
            "visualize",
            "--checkpoint",
            "m",
            "--data",
            "d",
            "--samples",
            "2,0",
            "--out",
            "v",
        ],
        dir.path(),
    );
    let out = files(&dir.path().join("v"));
    // Original, overlay and 4 heads per sample, plus boxes.csv and the echo.
    assert_eq!(out.len(), 2 * 6 + 2);
    let bundle = load_bundle(&dir.path().join("d")).unwrap();
    let DatasetBundle::Classification { test, .. } = bundle else {
        panic!("classification dataset")
    };
    for index in [0usize, 2] {
        let (w, h, pixels) = read_p6(&out[&format!("test_{index:04}_original.ppm")]);
        assert_eq!((w, h), (16, 16));
        let image = &test[index].image;
        let plane = w * h;
        let expected: Vec<u8> = (0..plane)
            .flat_map(|p| (0..3).map(move |c| (c, p)))
            .map(|(c, p)| (image.data()[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        assert_eq!(pixels, expected);
        for head in 0..4 {
            let (hw, hh, _) = read_p6(&out[&format!("test_{index:04}_head{head:02}.ppm")]);
            assert_eq!((hw, hh), (16, 16));
        }
    }
    let boxes = csv_rows(std::str::from_utf8(&out["boxes.csv"]).unwrap());
    assert_eq!(boxes.len(), 3);
    assert_eq!((boxes[1][0].as_str(), boxes[2][0].as_str()), ("2", "0"));
}

#[test]
fn visualize_is_byte_identical_on_rerun() {
    let dir = trained();
    for out in ["a", "b"] {
        ok(
            &[
                "visualize",
                "--checkpoint",
                "m",
                "--data",
                "d",
                "--samples",
                "1",
                "--split",
                "train",
                "--out",
                out,
            ],
            dir.path(),
        );
    }
    assert_eq!(files(&dir.path().join("a")), files(&dir.path().join("b")));
}

#[test]
fn visualize_rejects_bad_samples_and_splits() {
    let dir = trained();
    let (code, err) = fails(
        &[
            "visualize",
            "--checkpoint",
            "m",
            "--data",
            "d",
            "--samples",
            "12",
            "--out",
            "v",
        ],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(
        err.contains("12 out of range") && err.contains("12 samples"),
        "{err}"
    );
    let (code, err) = fails(
        &[
            "visualize",
            "--checkpoint",
            "m",
            "--data",
            "d",
            "--split",
            "query",
            "--out",
            "v",
        ],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(err.contains("train, test"), "{err}");
    assert!(!dir.path().join("v").exists());
}

const ABLATE: &[&str] = &[
    "ablate", "--data", "d", "--epochs", "1", "--depth", "2", "--heads", "2", "--batch", "5",
];

#[test]
fn ablate_strategy_emits_four_rows() {
    let dir = workspace();
    let stdout = run_with(ABLATE, &["--axis", "strategy", "--out", "a"], dir.path());
    let csv = fs::read_to_string(dir.path().join("a/ablation_strategy.csv")).unwrap();
    assert_eq!(stdout, csv);
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 5);
    let values: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(values, vec!["random", "uniform", "reversed", "shuffle"]);
    assert_eq!(
        fs::read_to_string(dir.path().join("a/ablation_strategy_runs.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
}

#[test]
fn ablate_heads_follows_the_given_values() {
    let dir = workspace();
    run_with(
        ABLATE,
        &["--axis", "M", "--values", "1,8,32", "--out", "a"],
        dir.path(),
    );
    let rows = csv_rows(&fs::read_to_string(dir.path().join("a/ablation_M.csv")).unwrap());
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][0], "M");
    assert_eq!(
        rows[1..].iter().map(|r| r[0].as_str()).collect::<Vec<_>>(),
        vec!["1", "8", "32"]
    );
}

#[test]
fn ablate_objective_over_seeds_has_mean_and_sd() {
    let dir = workspace();
    run_with(
        ABLATE,
        &[
            "--axis",
            "objective",
            "--values",
            "baseline,cal",
            "--seeds",
            "3",
            "--out",
            "a",
        ],
        dir.path(),
    );
    let rows = csv_rows(&fs::read_to_string(dir.path().join("a/ablation_objective.csv")).unwrap());
    let header = &rows[0];
    for name in ["top1_mean", "top1_sd", "miou_mean", "miou_sd"] {
        let col = header
            .iter()
            .position(|h| h == name)
            .unwrap_or_else(|| panic!("{name} missing"));
        for row in &rows[1..] {
            assert!(row[col].parse::<f64>().is_ok(), "{name}: {row:?}");
        }
    }
    assert!(rows[1..].iter().all(|r| r[1] == "3"));
    let runs = fs::read_to_string(dir.path().join("a/ablation_objective_runs.csv")).unwrap();
    let seeds: Vec<String> = csv_rows(&runs)[1..].iter().map(|r| r[1].clone()).collect();
    assert_eq!(seeds, vec!["0", "1", "2", "0", "1", "2"]);
}

#[test]
fn ablate_writes_one_file_per_axis_and_is_repeatable() {
    let dir = workspace();
    for out in ["a", "b"] {
        run_with(ABLATE, &["--axis", "objective,M", "--out", out], dir.path());
    }
    let a = files(&dir.path().join("a"));
    let names: Vec<&str> = a.keys().map(String::as_str).collect();
    assert_eq!(
        names,
        vec![
            "ablate.cfg",
            "ablation_M.csv",
            "ablation_M_runs.csv",
            "ablation_objective.csv",
            "ablation_objective_runs.csv"
        ]
    );
    assert_eq!(a, files(&dir.path().join("b")));
}

#[test]
fn ablate_rejects_bad_input_before_training() {
    let dir = workspace();
    let (code, err) = fails_with(ABLATE, &["--axis", "lr", "--out", "a"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("strategy, M, objective"), "{err}");
    let (code, err) = fails_with(ABLATE, &["--out", "a"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("strategy, M, objective"), "{err}");
    let (code, _) = fails_with(
        ABLATE,
        &["--axis", "M", "--values", "2,lots", "--out", "a"],
        dir.path(),
    );
    assert_eq!(code, 2);
    let (code, err) = fails_with(
        ABLATE,
        &["--axis", "strategy", "--batch", "1", "--out", "a"],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(err.contains("N >= 2"), "{err}");
    let (code, _) = fails_with(
        ABLATE,
        &["--axis", "M,objective", "--values", "1", "--out", "a"],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(!dir.path().join("a").exists());
}
