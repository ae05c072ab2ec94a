use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mcgan(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mcgan"));
    cmd.current_dir(dir).args(args);
    for (key, _) in std::env::vars().filter(|(k, _)| k.starts_with("MCGAN_")) {
        cmd.env_remove(key);
    }
    cmd.output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mcgan(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Temp dir holding a 2-subject, 4-image synthetic dataset at 32x32 in `ds/`.
fn workspace() -> TempDir {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["synth", "--out", "ds", "--subjects", "2", "--images", "4", "--size", "32", "--seed", "3"]);
    tmp
}

const SMALL: [&str; 8] = ["--size", "32", "--base-width", "4", "--batch-size", "4", "--lr", "2e-4"];

fn train(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--dataset", "ds", "--out", out];
    args.extend(SMALL);
    for (flag, default) in [("--epochs", "1"), ("--seed", "7")] {
        if !extra.contains(&flag) {
            args.extend([flag, default]);
        }
    }
    args.extend(extra);
    ok(dir, &args);
    dir.join(out)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()).collect()
}

#[test]
fn train_writes_checkpoint_and_loss_log() {
    let tmp = workspace();
    let run = train(tmp.path(), "run", &[]);
    assert!(run.join("checkpoint/manifest").is_file());
    assert!(run.join("checkpoint/payload.bin").is_file());
    assert!(run.join("config").is_file());
    let rows = csv_rows(&run.join("losses.csv"));
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[0][0], "1");
}

#[test]
fn same_seed_reproduces_every_artifact() {
    let tmp = workspace();
    let a = train(tmp.path(), "a", &[]);
    let b = train(tmp.path(), "b", &[]);
    for file in ["losses.csv", "config", "checkpoint/manifest", "checkpoint/payload.bin"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let c = train(tmp.path(), "c", &["--seed", "8"]);
    assert_ne!(fs::read(a.join("losses.csv")).unwrap(), fs::read(c.join("losses.csv")).unwrap());
}

#[test]
fn ablation_flags_select_the_cgan_path() {
    let tmp = workspace();
    let run = train(tmp.path(), "cgan", &["--memory", "off", "--conditional", "on"]);
    let config = fs::read_to_string(run.join("config")).unwrap();
    assert!(config.contains("memory_enabled=off\n"));
    assert!(config.contains("conditional_enabled=on\n"));
    let manifest = fs::read_to_string(run.join("checkpoint/manifest")).unwrap();
    assert!(!manifest.contains("param/memory"));
    assert!(!manifest.contains("param/gate"));
}

#[test]
fn flags_override_environment_which_overrides_the_config_file() {
    let tmp = workspace();
    fs::write(tmp.path().join("cfg"), "epochs=3\nslots=5\nbase_width=4\nimage_size=32\nbatch_size=4\n").unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mcgan"));
    cmd.current_dir(tmp.path())
        .args(["train", "--dataset", "ds", "--out", "run", "--config", "cfg", "--epochs", "1", "--seed", "2"])
        .env("MCGAN_SLOTS", "6")
        .env("MCGAN_EPOCHS", "2");
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let config = fs::read_to_string(tmp.path().join("run/config")).unwrap();
    assert!(config.contains("epochs=1\n"), "{config}");
    assert!(config.contains("slots=6\n"), "{config}");
    assert!(config.contains("seed=2\n"), "{config}");
}

#[test]
fn resume_continues_the_loss_log() {
    let tmp = workspace();
    let run = train(tmp.path(), "run", &[]);
    ok(tmp.path(), &["train", "--dataset", "ds", "--out", "run", "--resume", "--epochs", "2"]);
    let rows = csv_rows(&run.join("losses.csv"));
    let steps: Vec<u64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(steps, (1..=16).collect::<Vec<_>>());

    let full = train(tmp.path(), "full", &["--epochs", "2"]);
    assert_eq!(fs::read(run.join("losses.csv")).unwrap(), fs::read(full.join("losses.csv")).unwrap());
}

#[test]
fn eval_of_ground_truth_is_perfect_and_summary_matches_rows() {
    let tmp = workspace();
    let stdout = ok(tmp.path(), &["eval", "--oracle", "--dataset", "ds", "--out", "ev/rows.csv"]);
    assert!(stdout.starts_with("task count auc nss cc kl sm\n"));
    let rows = csv_rows(&tmp.path().join("ev/rows.csv"));
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let cc: f64 = r[4].parse().unwrap();
        let sm: f64 = r[6].parse().unwrap();
        assert!((cc - 1.0).abs() < 1e-9 && (sm - 1.0).abs() < 1e-9, "{r:?}");
    }
    let summary = csv_rows(&tmp.path().join("ev/rows_summary.csv"));
    assert_eq!(summary.len(), 2);
    for s in &summary {
        let task_rows: Vec<&Vec<String>> = rows.iter().filter(|r| r[1] == s[0]).collect();
        assert_eq!(s[1], task_rows.len().to_string());
        for col in 2..7 {
            let mean = task_rows.iter().map(|r| r[col].parse::<f64>().unwrap()).sum::<f64>() / task_rows.len() as f64;
            let reported: f64 = s[col].parse().unwrap();
            assert!((mean - reported).abs() < 1e-12, "task {} column {col}", s[0]);
        }
    }
}

#[test]
fn eval_task_filter_restricts_rows() {
    let tmp = workspace();
    let run = train(tmp.path(), "run", &[]);
    let ckpt = run.join("checkpoint");
    ok(tmp.path(), &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", "ds", "--out", "t1.csv", "--task", "1"]);
    let rows = csv_rows(&tmp.path().join("t1.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[1] == "1"));
}

#[test]
fn eval_size_mismatch_is_a_runtime_error() {
    let tmp = workspace();
    let run = train(tmp.path(), "run", &[]);
    ok(tmp.path(), &["synth", "--out", "big", "--subjects", "2", "--images", "2", "--size", "64"]);
    let out = mcgan(
        tmp.path(),
        &["eval", "--checkpoint", run.join("checkpoint").to_str().unwrap(), "--dataset", "big", "--out", "x.csv"],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("size"));
}

#[test]
fn predict_keeps_input_dimensions_and_tracks_memory_files() {
    let tmp = workspace();
    let run = train(tmp.path(), "run", &[]);
    let ckpt = run.join("checkpoint");
    let ckpt = ckpt.to_str().unwrap();
    let wide = tmp.path().join("wide.png");
    image::RgbImage::from_fn(48, 40, |x, y| image::Rgb([(x * 5) as u8, (y * 6) as u8, 90])).save(&wide).unwrap();
    let predict = |task: &str, out: &str, extra: &[&str]| {
        let mut args = vec!["predict", "--checkpoint", ckpt, "--image", "wide.png", "--task", task, "--out", out];
        args.extend(extra);
        ok(tmp.path(), &args);
        fs::read(tmp.path().join(out)).unwrap()
    };
    let fresh = predict("0", "p0.png", &[]);
    let img = image::load_from_memory(&fresh).unwrap();
    assert_eq!((img.width(), img.height()), (48, 40));
    assert_ne!(fresh, predict("1", "p1.png", &[]));

    // A new state file starts fresh, so the first prediction matches.
    let first = predict("0", "m1.png", &["--memory-state", "s.txt"]);
    assert_eq!(first, fresh);
    let after_one = fs::read_to_string(tmp.path().join("s.txt")).unwrap();
    assert!(after_one.starts_with("mcgan-memory-state 1\nsubject subject\n"));
    predict("0", "m2.png", &["--memory-state", "s.txt"]);
    assert_ne!(after_one, fs::read_to_string(tmp.path().join("s.txt")).unwrap());

    let out = mcgan(tmp.path(), &["predict", "--checkpoint", ckpt, "--image", "wide.png", "--task", "2", "--out", "x.png"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn activations_writes_one_png_per_layer() {
    let tmp = workspace();
    let run = train(tmp.path(), "run", &[]);
    let ckpt = run.join("checkpoint");
    ok(
        tmp.path(),
        &["activations", "--checkpoint", ckpt.to_str().unwrap(), "--image", "ds/images/img000.png", "--out", "act"],
    );
    let files: Vec<_> = fs::read_dir(tmp.path().join("act")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files.len(), 10);
    let layer = image::open(tmp.path().join("act/layer_01.png")).unwrap();
    assert_eq!((layer.width(), layer.height()), (32, 32));
    let bad = mcgan(
        tmp.path(),
        &["activations", "--checkpoint", ckpt.to_str().unwrap(), "--image", "ds/images/img000.png", "--out", "a", "--layers", "11"],
    );
    assert_eq!(code(&bad), 1);
}

#[test]
fn synth_is_reproducible() {
    let tmp = workspace();
    ok(tmp.path(), &["synth", "--out", "again", "--subjects", "2", "--images", "4", "--size", "32", "--seed", "3"]);
    for file in ["fixations.csv", "meta", "images/img000.png", "maps/s00__img003__t1.png"] {
        let a = tmp.path().join("ds").join(file);
        assert!(a.is_file(), "{file}");
        assert_eq!(fs::read(a).unwrap(), fs::read(tmp.path().join("again").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn usage_errors_exit_two_and_runtime_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&mcgan(tmp.path(), &["train", "--bogus"])), 2);
    assert_eq!(code(&mcgan(tmp.path(), &["frobnicate"])), 2);
    assert_eq!(code(&mcgan(tmp.path(), &["train", "--dataset", "ds", "--out", "r", "--memory", "maybe"])), 2);
    assert_eq!(code(&mcgan(tmp.path(), &["--deterministic", "synth", "--out", "x"])), 2);
    let missing = mcgan(tmp.path(), &["train", "--dataset", "missing", "--out", "r", "--seed", "1"]);
    assert_eq!(code(&missing), 1);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing"));
}

#[test]
fn verify_all_passes_and_reports_counts() {
    let tmp = TempDir::new().unwrap();
    let stdout = ok(tmp.path(), &["verify", "all"]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 3, "{stdout}");
    for (line, suite) in lines.iter().zip(["gradients", "metrics", "memory"]) {
        assert!(line.starts_with(suite) && line.contains(" passed, 0 failed"), "{line}");
    }
}
