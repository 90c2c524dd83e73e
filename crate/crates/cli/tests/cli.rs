//! End-to-end checks of the command-line surface on a micro dataset.

use std::path::Path;
use std::process::{Command, Output};

fn paresseg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paresseg"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RUST_BACKTRACE")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str], cwd: &Path) -> String {
    let out = paresseg(args, cwd);
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 output")
}

fn run_err(args: &[&str], cwd: &Path) -> String {
    let out = paresseg(args, cwd);
    assert!(!out.status.success(), "command {args:?} unexpectedly passed");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn the_synth_train_eval_flow_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("phantom.cfg"),
        "cases = 4\ndims = 24,40,40\ntumor_count = 1,2\ntumor_radius = 3,5\n\
         art_only_blob_count = 1,1\n",
    )
    .unwrap();
    std::fs::write(
        root.join("train.cfg"),
        "fusion = pa_msf\nloss = be\nepochs = 1\npatch_size = 32\n\
         stage_channels = 8,8,8,8,8,8\nbatch_size = 4\nsamples_per_epoch = 4\n",
    )
    .unwrap();

    let msg = run_ok(
        &["synth", "--config", "phantom.cfg", "--out", "data", "--seed", "7"],
        root,
    );
    assert!(msg.contains("4 cases"), "unexpected synth output: {msg}");
    assert!(root.join("data/case_003/pv/meta.json").is_file());

    run_ok(
        &["split", "--data", "data", "--out", "folds.json", "--k", "2", "--seed", "3"],
        root,
    );
    let folds: Vec<Vec<String>> =
        serde_json::from_str(&std::fs::read_to_string(root.join("folds.json")).unwrap()).unwrap();
    assert_eq!(folds.len(), 2);
    assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), 4);

    run_ok(
        &["train", "--config", "train.cfg", "--data", "data", "--out", "run", "--seed", "11"],
        root,
    );
    for f in ["checkpoint.bin", "run.json", "report.json", "report.txt"] {
        assert!(root.join("run").join(f).is_file(), "missing artifact {f}");
    }

    let msg = run_ok(
        &[
            "infer", "--checkpoint", "run/checkpoint.bin", "--case", "data/case_000",
            "--out", "mask",
        ],
        root,
    );
    assert!(msg.contains("case 000"), "unexpected infer output: {msg}");
    assert!(root.join("mask/data.raw").is_file());

    let msg = run_ok(
        &[
            "eval", "--checkpoint", "run/checkpoint.bin", "--data", "data",
            "--out", "scores", "--split", "folds.json", "--fold", "1",
        ],
        root,
    );
    // Only the two cases of fold 1 appear in the table.
    for id in &folds[1] {
        assert!(msg.contains(id.as_str()), "fold case {id} missing from: {msg}");
    }
    for id in &folds[0] {
        assert!(
            !msg.lines().any(|l| l.starts_with(id.as_str())),
            "held-out case {id} leaked into: {msg}"
        );
    }
    assert!(root.join("scores/eval.json").is_file());
}

#[test]
fn the_ablation_command_writes_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("phantom.cfg"),
        "cases = 4\ndims = 24,40,40\ntumor_count = 1,1\ntumor_radius = 3,5\n\
         art_only_blob_count = 1,1\n",
    )
    .unwrap();
    run_ok(
        &["synth", "--config", "phantom.cfg", "--out", "data", "--seed", "5"],
        root,
    );
    let msg = run_ok(
        &[
            "ablate", "--data", "data", "--out", "abl", "--strategies", "single",
            "--losses", "ce", "--seeds", "1", "--folds", "2", "--test-fold", "0",
            "--epochs", "1", "--patch-size", "32", "--stage-channels", "8,8,8,8,8,8",
            "--batch-size", "4", "--samples-per-epoch", "4",
        ],
        root,
    );
    assert!(msg.contains("single"), "table missing the strategy row: {msg}");
    assert!(msg.contains("mean"), "table missing the seed-mean row: {msg}");
    for f in ["table.txt", "table.csv", "cells.json"] {
        assert!(root.join("abl").join(f).is_file(), "missing output {f}");
    }
    let csv = std::fs::read_to_string(root.join("abl/table.csv")).unwrap();
    assert!(csv.starts_with("fusion,loss,seed,"));
}

#[test]
fn missing_seeds_and_bad_keys_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let err = run_err(&["synth", "--out", "data", "--cases", "2"], root);
    assert!(err.contains("--seed"), "unexpected error: {err}");

    let err = run_err(
        &["train", "--data", "data", "--out", "run", "--fusion", "single",
          "--loss", "ce", "--epochs", "1"],
        root,
    );
    assert!(err.contains("--seed"), "unexpected error: {err}");

    std::fs::write(root.join("bad.cfg"), "cases = 2\nnonsense = 1\n").unwrap();
    let err = run_err(
        &["synth", "--config", "bad.cfg", "--out", "data", "--seed", "1"],
        root,
    );
    assert!(err.contains("nonsense"), "unexpected error: {err}");
}

#[test]
fn gradient_verification_reports_every_entry_and_rejects_bad_steps() {
    let dir = tempfile::tempdir().unwrap();
    let msg = run_ok(&["gradcheck"], dir.path());
    assert!(msg.contains("pass network"), "network entry missing: {msg}");
    assert!(!msg.contains("FAIL"), "unexpected failure: {msg}");

    let err = run_err(&["gradcheck", "--eps", "1"], dir.path());
    assert!(err.contains("trustworthy range"), "unexpected error: {err}");
}
