//! End-to-end checks of the command-line binary: synth, train, eval,
//! count, baseline, and report drive each other through real files in a
//! temporary directory.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pidcount"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn pidcount");
    assert!(
        out.status.success(),
        "pidcount {:?} failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Byte-for-byte comparison of two directory trees.
fn assert_trees_identical(a: &Path, b: &Path) {
    let list = |dir: &Path| -> Vec<String> {
        let mut names = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    names.push(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
                }
            }
        }
        names.sort();
        names
    };
    let (fa, fb) = (list(a), list(b));
    assert_eq!(fa, fb, "file sets differ");
    for rel in &fa {
        let ba = std::fs::read(a.join(rel)).unwrap();
        let bb = std::fs::read(b.join(rel)).unwrap();
        assert_eq!(ba, bb, "{rel} differs between the two trees");
    }
}

#[test]
fn synth_is_deterministic_and_split_partitions() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&[
            "synth",
            "--out",
            out.to_str().unwrap(),
            "--n",
            "10",
            "--size",
            "32",
            "--counts",
            "2:5",
            "--seed",
            "7",
            "--split",
            "6:2:2",
        ]);
    }
    assert_trees_identical(&a, &b);
    for (part, n) in [("train", 6), ("val", 2), ("test", 2)] {
        let images = std::fs::read_dir(a.join(part).join("images")).unwrap().count();
        assert_eq!(images, n, "{part} should hold {n} images");
        assert!(a.join(part).join("counts.csv").exists());
    }
    // A bad partition is rejected as a usage error.
    let out = bin()
        .args(["synth", "--out", dir.path().join("c").to_str().unwrap(), "--n", "10", "--split", "5:2:2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn augment_expands_eightfold_with_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (src, dst) = (dir.path().join("src"), dir.path().join("dst"));
    run_ok(&["synth", "--out", src.to_str().unwrap(), "--n", "3", "--size", "32", "--seed", "1"]);
    run_ok(&["augment", "--data", src.to_str().unwrap(), "--out", dst.to_str().unwrap()]);
    assert_eq!(std::fs::read_dir(dst.join("images")).unwrap().count(), 24);
    assert_eq!(std::fs::read_dir(dst.join("masks")).unwrap().count(), 24);
    let counts = std::fs::read_to_string(dst.join("counts.csv")).unwrap();
    assert_eq!(counts.lines().count(), 25, "header plus 24 rows");
}

/// One tiny train/eval/count/report pass. Model quality is not the point
/// here (two epochs at width 4); the file contract is.
#[test]
fn train_eval_count_report_file_contract() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    run_ok(&[
        "synth",
        "--out",
        ds.to_str().unwrap(),
        "--n",
        "15",
        "--size",
        "32",
        "--counts",
        "2:4",
        "--seed",
        "3",
    ]);

    let run = dir.path().join("run");
    let out = run_ok(&[
        "train",
        "--data",
        ds.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--variant",
        "pid",
        "--base-width",
        "4",
        "--epochs",
        "2",
        "--batch-size",
        "4",
        "--set",
        "augment=off",
    ]);
    let text = stdout(&out);
    assert!(text.contains("epoch   1/2") && text.contains("epoch   2/2"), "{text}");
    for name in ["best.ckpt", "curves.csv", "resolved.cfg"] {
        assert!(run.join(name).exists(), "missing {name}");
    }
    let curves = std::fs::read_to_string(run.join("curves.csv")).unwrap();
    assert!(curves.starts_with("epoch,train_loss,train_iou,val_loss,val_iou"));
    assert_eq!(curves.trim_end().lines().count(), 3, "header plus 2 epochs");
    let resolved = std::fs::read_to_string(run.join("resolved.cfg")).unwrap();
    assert!(resolved.contains("variant = pid") && resolved.contains("epochs = 2"), "{resolved}");

    // Evaluation writes per-image CSV, aggregate JSON, and the config.
    let eval_dir = dir.path().join("eval");
    let ckpt = run.join("best.ckpt");
    run_ok(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        ds.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with(
        "id,method,accuracy,dice,jaccard,precision,counting_accuracy,\
         hausdorff_px,hausdorff_degenerate,n_pred,n_gt"
    ));
    assert_eq!(csv.trim_end().lines().count(), 16, "header plus 15 images");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap())
            .unwrap();
    for key in ["accuracy", "dice", "jaccard", "precision", "counting_accuracy", "hausdorff_px"] {
        assert!(json.get(key).is_some(), "metrics.json lacks {key}");
    }
    assert_eq!(json["n_images"], 15);

    // Count prints one row per image and can write the same as CSV.
    let pred_csv = dir.path().join("pred.csv");
    let out = run_ok(&[
        "count",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        ds.to_str().unwrap(),
        "--out",
        pred_csv.to_str().unwrap(),
    ]);
    let text = stdout(&out);
    assert!(text.starts_with("id,count\n"));
    assert_eq!(text.trim_end().lines().count(), 16);
    assert_eq!(std::fs::read_to_string(&pred_csv).unwrap(), text);

    // Report renders curves; overlays when given data.
    let report_dir = dir.path().join("report");
    run_ok(&[
        "report",
        "--run",
        run.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
        "--data",
        ds.to_str().unwrap(),
        "--limit",
        "2",
    ]);
    assert!(report_dir.join("loss.png").exists());
    assert!(report_dir.join("iou.png").exists());
    let overlays = std::fs::read_dir(&report_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().file_name().to_string_lossy().starts_with("overlay_")
        })
        .count();
    assert_eq!(overlays, 2);
}

#[test]
fn baseline_writes_same_report_shape() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    run_ok(&["synth", "--out", ds.to_str().unwrap(), "--n", "6", "--size", "32", "--seed", "5"]);
    for method in ["otsu", "watershed", "hough"] {
        let out_dir = dir.path().join(method);
        let out = run_ok(&[
            "baseline",
            "--method",
            method,
            "--data",
            ds.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(stdout(&out).contains(&format!("method {method}")));
        assert!(out_dir.join("metrics.csv").exists());
        assert!(out_dir.join("metrics.json").exists());
        let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
        assert_eq!(csv.trim_end().lines().count(), 7, "header plus 6 images");
        assert!(csv.lines().nth(1).unwrap().split(',').nth(1) == Some(method));
    }
    // Unknown method is a usage/config failure, exit code 1.
    let out = bin()
        .args(["baseline", "--method", "magic", "--data", ds.to_str().unwrap(), "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes_separate_usage_data_and_missing_input() {
    // Unknown flag: clap usage error.
    let out = bin().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    // Bad config value.
    let out = bin()
        .args(["synth", "--out", "/tmp/nonexistent-ignored", "--set", "lr=banana"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    // Missing dataset directory: data error.
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "eval",
            "--ckpt",
            dir.path().join("no.ckpt").to_str().unwrap(),
            "--data",
            dir.path().join("none").to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // Help exits zero.
    let out = bin().args(["--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn config_file_and_set_flow_through_training() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    run_ok(&["synth", "--out", ds.to_str().unwrap(), "--n", "8", "--size", "32", "--seed", "2"]);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "variant = m1\nbase_width = 4\nepochs = 3\naugment = off\n").unwrap();
    let run = dir.path().join("run");
    // --set overrides the file; the dedicated flag overrides --set.
    let out = run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "epochs=2",
        "--epochs",
        "1",
        "--data",
        ds.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(stdout(&out).contains("training m1"));
    let resolved = std::fs::read_to_string(run.join("resolved.cfg")).unwrap();
    assert!(resolved.contains("variant = m1"), "{resolved}");
    assert!(resolved.contains("epochs = 1"), "{resolved}");
}
