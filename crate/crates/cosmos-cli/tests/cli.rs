//! End-to-end checks of the `cosmos` binary: exit codes, emitted files,
//! and rerun determinism.

use std::path::Path;
use std::process::{Command, Output};

fn cosmos(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cosmos"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const TOY_CONFIG: &str = "
[dataset]
kind = synthetic
n_per_class = 40
dim = 12
classes = 2
separation = 3.0

[model]
patch_arch = 12,16,8
whole_arch = 12,16,8
classes = 2

[train]
max_iters = 5
batch_size = 16
lambda1 = 0.2
classifier_epochs = 20

[output]
dir = out
seed = 11
";

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("toy.conf");
    std::fs::write(&path, TOY_CONFIG).unwrap();
    path
}

#[test]
fn train_succeeds_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = cosmos(
        &["train", "--config", config.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("out");
    assert!(out_dir.join("model.cosmos").exists());
    assert!(out_dir.join("metrics.txt").exists());
    assert!(out_dir.join("metrics.csv").exists());
    // 5 training epochs -> header + 5 records
    let log = std::fs::read_to_string(out_dir.join("train_whole.log")).unwrap();
    assert_eq!(log.trim_end().lines().count(), 6);
    let epoch_lines = log
        .trim_end()
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .count();
    assert_eq!(epoch_lines, 5);
}

#[test]
fn missing_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    std::fs::write(
        &config,
        "
[dataset]
kind = idx
train_images = nope-images
train_labels = nope-labels
test_images = nope-t-images
test_labels = nope-t-labels
",
    )
    .unwrap();
    let out = cosmos(
        &["train", "--config", config.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("broken.conf");
    std::fs::write(&config, "[model]\nnot_a_key = oops\n").unwrap();
    let out = cosmos(
        &["train", "--config", config.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let run = |out_name: &str| {
        let out = cosmos(
            &[
                "train",
                "--config",
                config.to_str().unwrap(),
                "--out",
                out_name,
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.path().join(out_name).join("model.cosmos")).unwrap()
    };
    let a = run("out_a");
    let b = run("out_b");
    assert_eq!(a, b);

    // a different seed changes the archive
    let out = cosmos(
        &[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "99",
            "--out",
            "out_c",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let c = std::fs::read(dir.path().join("out_c").join("model.cosmos")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn eval_and_score_dist_run_from_archive() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = cosmos(
        &["train", "--config", config.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success());
    let archive = dir.path().join("out").join("model.cosmos");

    let out = cosmos(
        &[
            "eval",
            "--archive",
            archive.to_str().unwrap(),
            "--rank-k",
            "2",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("accuracy:"));
    assert!(stdout.contains("rank-1"));

    let out = cosmos(
        &[
            "score-dist",
            "--archive",
            archive.to_str().unwrap(),
            "--class",
            "0",
            "--bins",
            "10",
            "--out",
            "dist",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("dist").join("score_dist_class0.csv").exists());

    let out = cosmos(
        &[
            "extract-features",
            "--archive",
            archive.to_str().unwrap(),
            "--out",
            "feats",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(dir.path().join("feats").join("features.csv").exists());
}

#[test]
fn corrupt_archive_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = cosmos(
        &["train", "--config", config.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success());
    let archive = dir.path().join("out").join("model.cosmos");
    let mut bytes = std::fs::read(&archive).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&archive, bytes).unwrap();
    let out = cosmos(&["eval", "--archive", archive.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn ablate_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("ablate.conf");
    std::fs::write(
        &config,
        "
[dataset]
kind = synthetic
n_per_class = 30
dim = 12
classes = 2
separation = 3.0

[model]
patch_arch = 12,16,8
classes = 2

[train]
max_iters = 2
batch_size = 16
classifier_epochs = 8

[ablate]
cells = euclidean,cosine+mahalanobis
seeds = 2

[output]
dir = aout
seed = 4
",
    )
    .unwrap();
    let out = cosmos(
        &["ablate", "--config", config.to_str().unwrap(), "--jobs", "2"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("aout").join("ablation.csv")).unwrap();
    assert!(table.starts_with("cell,mean,std,seed0,seed1,status"));
    assert_eq!(table.trim_end().lines().count(), 3);
    assert!(table.contains("cosine+mahalanobis"));
}
