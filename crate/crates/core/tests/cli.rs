use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tiny() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.json")
}

fn ssg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssg")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ssg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_twice_writes_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["train", "--config", s(&tiny()), "--out", s(out), "--set", "epochs=3"]);
    }
    let read = |p: &Path, f: &str| fs::read(p.join(f)).unwrap();
    assert_eq!(read(&a, "metrics.jsonl"), read(&b, "metrics.jsonl"));
    assert_eq!(read(&a, "checkpoint.txt"), read(&b, "checkpoint.txt"));
    let curves = fs::read_to_string(a.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 4);
    assert!(curves.starts_with("epoch,l_src,l_tgt,l_ss,l_total,target_acc,domain_acc\n"));
    let config = fs::read_to_string(a.join("config.json")).unwrap();
    assert!(config.contains("\"epochs\": 3"));
}

#[test]
fn eval_reproduces_the_trained_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["train", "--config", s(&tiny()), "--out", s(out), "--set", "epochs=4", "--set", "lr=0.05"]);
    let trained = fs::read_to_string(out.join("summary.csv")).unwrap();
    let ckpt = out.join("checkpoint.txt");
    let eval_dir = out.join("eval");
    ok(&["eval", "--config", s(&tiny()), "--out", s(&eval_dir), "--checkpoint", s(&ckpt)]);
    assert_eq!(fs::read_to_string(eval_dir.join("summary.csv")).unwrap(), trained);
}

#[test]
fn gradcheck_passes_on_the_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["gradcheck", "--config", s(&tiny()), "--out", s(dir.path())]);
    assert_eq!(stdout.matches("pass").count(), 2, "{stdout}");
    assert!(dir.path().join("gradcheck.txt").exists());
}

#[test]
fn ablate_writes_a_seven_row_summary() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "ablate",
        "--config",
        s(&tiny()),
        "--out",
        s(dir.path()),
        "--set",
        "epochs=2",
        "--set",
        "embed_dim=16",
        "--seeds",
        "0,1,2",
    ]);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "variant,mean,std,seeds");
    assert_eq!(lines.len(), 8);
    assert!(lines[1..].iter().all(|l| l.ends_with(",0;1;2")));
    assert!(dir.path().join("runs/ssg_seed2.jsonl").exists());
}

#[test]
fn ablate_needs_three_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssg(&["ablate", "--config", s(&tiny()), "--out", s(dir.path()), "--seeds", "0,1"]);
    assert!(!out.status.success());
}

#[test]
fn config_errors_exit_nonzero_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    for (set, key) in [("mask_ratio=2", "mask_ratio"), ("no_such_key=1", "no_such_key"), ("sigma=-1", "sigma")] {
        let out = ssg(&["train", "--config", s(&tiny()), "--out", s(dir.path()), "--set", set]);
        assert!(!out.status.success(), "{set}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(key), "{set}: {err}");
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    }
    let missing = ssg(&["train", "--config", "/nonexistent/cfg.json", "--out", s(dir.path())]);
    assert!(!missing.status.success());
}

#[test]
fn curves_handles_empty_and_malformed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let csv = dir.path().join("empty.csv");
    ok(&["curves", "--metrics", s(&empty), "--out", s(&csv)]);
    assert_eq!(
        fs::read_to_string(&csv).unwrap(),
        "epoch,l_src,l_tgt,l_ss,l_total,target_acc,domain_acc\n"
    );

    let train_dir = dir.path().join("run");
    ok(&["train", "--config", s(&tiny()), "--out", s(&train_dir), "--set", "epochs=2"]);
    let good = fs::read_to_string(train_dir.join("metrics.jsonl")).unwrap();
    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, format!("{good}{{\"epoch\": 3,\n")).unwrap();
    let out = ssg(&["curves", "--metrics", s(&broken), "--out", s(&csv)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn gen_data_round_trips_through_the_feature_file() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    ok(&["gen-data", "--config", s(&tiny()), "--out", s(&gen)]);
    let features = gen.join("features.csv");
    let a = dir.path().join("from_synthetic");
    let b = dir.path().join("from_file");
    ok(&["train", "--config", s(&tiny()), "--out", s(&a), "--set", "epochs=2"]);
    ok(&[
        "train",
        "--config",
        s(&tiny()),
        "--out",
        s(&b),
        "--set",
        "epochs=2",
        "--set",
        &format!("data={{\"path\":\"{}\"}}", features.display()),
    ]);
    assert_eq!(
        fs::read(a.join("metrics.jsonl")).unwrap(),
        fs::read(b.join("metrics.jsonl")).unwrap()
    );
}
