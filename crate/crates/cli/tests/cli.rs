//! Binary-level behavior: exit codes, determinism of gen-data, and the
//! solve-pnp → eval path on a small dataset.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pose6d"))
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn usage_errors_exit_with_two() {
    let out = bin().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["solve-pnp", "--gt", "x", "--variant", "bogus"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let out = bin()
        .args(["eval", "--results", "/nonexistent.csv", "--gt", "/nonexistent"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin()
        .args(["dump-attention", "--checkpoint", "/missing.ckpt", "--data", "/missing"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn tree_digest(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let entry = entry.unwrap();
            if entry.file_type().unwrap().is_dir() {
                stack.push(entry.path());
            } else {
                let rel = entry
                    .path()
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .to_string();
                files.push((rel, std::fs::read(entry.path()).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn gen_data_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        run_ok(&[
            "gen-data",
            "--seed",
            "7",
            "--samples",
            "6",
            "--out",
            dir.to_str().unwrap(),
        ]);
    }
    assert_eq!(tree_digest(&a), tree_digest(&b));
    // different seed changes the payload
    let c = tmp.path().join("c");
    run_ok(&[
        "gen-data",
        "--seed",
        "8",
        "--samples",
        "6",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_ne!(tree_digest(&a), tree_digest(&c));
}

#[test]
fn gen_data_with_zero_objects_yields_empty_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("empty");
    let stdout = run_ok(&[
        "gen-data",
        "--seed",
        "3",
        "--samples",
        "5",
        "--max-objects",
        "0",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(stdout.contains("(0 objects)"), "{stdout}");
}

#[test]
fn solve_then_eval_scores_perfectly_on_noiseless_keypoints() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    run_ok(&[
        "gen-data",
        "--seed",
        "21",
        "--samples",
        "12",
        "--out",
        data.to_str().unwrap(),
    ]);
    let solve_out = tmp.path().join("solve");
    run_ok(&[
        "solve-pnp",
        "--gt",
        data.to_str().unwrap(),
        "--variant",
        "ibb32",
        "--method",
        "epnp",
        "--out",
        solve_out.to_str().unwrap(),
    ]);
    let results = solve_out.join("results.csv");
    assert!(results.exists());
    let eval_out = tmp.path().join("eval");
    let stdout = run_ok(&[
        "eval",
        "--results",
        results.to_str().unwrap(),
        "--gt",
        data.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(eval_out.join("report.csv").exists());
    assert!(eval_out.join("report.json").exists());
    assert!(eval_out.join("report.svg").exists());
    // noiseless keypoints solve to near-exact poses
    let csv = std::fs::read_to_string(eval_out.join("report.csv")).unwrap();
    let mean_line = csv.lines().last().unwrap();
    let auc: f64 = mean_line.split(',').nth(4).unwrap().parse().unwrap();
    assert!(auc > 0.999, "mean AUC {auc}: {stdout}");
    // run directories are self-describing
    assert!(eval_out.join("config.txt").exists());
    assert!(solve_out.join("config.txt").exists());
}

#[test]
fn gradcheck_smoke_passes() {
    let stdout = run_ok(&["gradcheck", "--seeds", "2"]);
    assert!(stdout.contains("all"), "{stdout}");
    assert!(stdout.contains("ok"));
}

#[test]
fn train_rotest_smoke_writes_checkpoint_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let out1 = tmp.path().join("r1");
    run_ok(&[
        "train-rotest",
        "--pairs",
        "200",
        "--epochs",
        "1",
        "--hidden",
        "16",
        "--seed",
        "5",
        "--out",
        out1.to_str().unwrap(),
    ]);
    let ckpt = out1.join("rotest.ckpt");
    assert!(ckpt.exists());
    assert!(out1.join("metrics.csv").exists());
    // resumed run continues the epoch counter in its metrics log
    let out2 = tmp.path().join("r2");
    run_ok(&[
        "train-rotest",
        "--pairs",
        "200",
        "--epochs",
        "1",
        "--hidden",
        "16",
        "--seed",
        "5",
        "--resume",
        ckpt.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    let metrics = std::fs::read_to_string(out2.join("metrics.csv")).unwrap();
    let first_row = metrics.lines().nth(1).unwrap();
    assert!(first_row.starts_with("1,"), "{metrics}");
}

#[test]
fn train_toy_smoke_and_attention_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    run_ok(&[
        "gen-data",
        "--seed",
        "31",
        "--samples",
        "24",
        "--out",
        data.to_str().unwrap(),
    ]);
    let out = tmp.path().join("toy");
    run_ok(&[
        "train-toy",
        "--data",
        data.to_str().unwrap(),
        "--epochs",
        "1",
        "--embed-dim",
        "32",
        "--head-hidden",
        "16",
        "--queries",
        "6",
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    let ckpt = out.join("toy.ckpt");
    assert!(ckpt.exists());
    let attn = tmp.path().join("attn");
    run_ok(&[
        "dump-attention",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--sample",
        "0",
        "--out",
        attn.to_str().unwrap(),
    ]);
    let enc = std::fs::read_to_string(attn.join("encoder_self_attention.csv")).unwrap();
    let dec = std::fs::read_to_string(attn.join("decoder_cross_attention.csv")).unwrap();
    // every exported row is stochastic
    for line in enc.lines().skip(1).chain(dec.lines().skip(1)) {
        let Some(weights) = line.split(',').nth(4) else {
            continue;
        };
        let sum: f64 = weights
            .split_whitespace()
            .map(|w| w.parse::<f64>().unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-5, "row not stochastic: {line}");
    }
    assert!(dec.lines().count() > 1);
}
