use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn astra(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_astra")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = astra(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// 200 rows, every tenth positive, loosely separated.
fn toy(dir: &Path) -> PathBuf {
    let mut text = String::new();
    for i in 0..200u32 {
        let pos = i % 10 == 0;
        let a = ((i * 37) % 23) as f64 / 23.0 - 0.5;
        let b = ((i * 53) % 19) as f64 / 19.0 - 0.5;
        let shift = if pos { 1.5 } else { 0.0 };
        text += &format!("{} 1:{} 2:{}\n", if pos { "+1" } else { "-1" }, a + shift, b + shift);
    }
    let path = dir.join("toy.txt");
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn missing_dataset_leaves_no_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let res = astra(&[
        "train",
        "--dataset",
        &s(&dir.path().join("absent.txt")),
        "--out",
        &s(&out),
    ]);
    assert_eq!(res.status.code(), Some(3));
    let err = String::from_utf8_lossy(&res.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(!out.exists());
}

#[test]
fn malformed_dataset_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "1 1:0.5\n-1 2:x\n").unwrap();
    let res = astra(&["train", "--dataset", &s(&bad), "--out", &s(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 2"));
}

#[test]
fn train_writes_artifacts_and_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let data = toy(dir.path());
    let a = dir.path().join("a");
    ok(&[
        "train",
        "--dataset",
        &s(&data),
        "--epochs",
        "40",
        "--loss",
        "gmn",
        "--astra",
        "on",
        "--seed",
        "9",
        "--out",
        &s(&a),
    ]);
    let csv = fs::read_to_string(a.join("epochs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["method"], "gmn-astra");
    assert_eq!(summary["epochs_run"], 40);
    assert!(summary["test"]["cm"]["tp"].is_u64());
    assert!(fs::read_to_string(a.join("checkpoint.txt"))
        .unwrap()
        .starts_with("astra-mlp-checkpoint 1"));

    let b = dir.path().join("b");
    ok(&["train", "--config", &s(&a.join("manifest.toml")), "--out", &s(&b)]);
    for f in ["epochs.csv", "checkpoint.txt", "summary.json", "manifest.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn explicit_validation_and_test_files() {
    let dir = TempDir::new().unwrap();
    let data = toy(dir.path());
    let out = dir.path().join("o");
    ok(&[
        "train",
        "--dataset",
        &s(&data),
        "--val",
        &s(&data),
        "--test",
        &s(&data),
        "--epochs",
        "5",
        "--out",
        &s(&out),
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_train"], 200);
    assert_eq!(summary["n_val"], 200);
    let res = astra(&[
        "train",
        "--dataset",
        &s(&data),
        "--test",
        &s(&data),
        "--out",
        &s(&dir.path().join("p")),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn flags_override_config() {
    let dir = TempDir::new().unwrap();
    let data = toy(dir.path());
    let cfg = dir.path().join("cfg.toml");
    fs::write(
        &cfg,
        format!(
            "dataset = \"{}\"\nseed = 4\n[train]\nepochs = 7\nloss = \"gmn\"\n",
            s(&data)
        ),
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(&[
        "train",
        "--config",
        &s(&cfg),
        "--epochs",
        "3",
        "--astra",
        "on",
        "--out",
        &s(&out),
    ]);
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("epochs = 3"));
    assert!(manifest.contains("loss = \"gmn-astra\""));
    assert!(manifest.contains("seed = 4"));
    assert_eq!(fs::read_to_string(out.join("epochs.csv")).unwrap().lines().count(), 4);
}

#[test]
fn config_errors_exit_with_usage_code() {
    let dir = TempDir::new().unwrap();
    let data = toy(dir.path());
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[train]\nepoch = 7\n").unwrap();
    let o = s(&dir.path().join("o"));
    assert_eq!(
        astra(&["train", "--config", &s(&cfg), "--dataset", &s(&data), "--out", &o])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        astra(&["cv", "--dataset", &s(&data), "--folds", "2", "--out", &o])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        astra(&["cv", "--dataset", &s(&data), "--jobs", "0", "--out", &o])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(astra(&["train", "--out", &o]).status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn cv_method_selection_and_report_consistency() {
    let dir = TempDir::new().unwrap();
    let data = toy(dir.path());
    let out = dir.path().join("cv");
    let res = ok(&[
        "cv",
        "--dataset",
        &s(&data),
        "--repeats",
        "1",
        "--epochs",
        "20",
        "--astra",
        "on",
        "--out",
        &s(&out),
    ]);
    assert!(String::from_utf8_lossy(&res.stdout).contains("With ASTra"));
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(
        runs.lines().next().unwrap(),
        "method,repeat,fold,tn,fp,fn,tp,g_mean,mcc,best_epoch,final_b"
    );
    assert_eq!(runs.lines().count(), 11);
    assert!(runs
        .lines()
        .skip(1)
        .all(|l| l.starts_with("bce-astra,") || l.starts_with("gmn-astra,")));
    let curves = fs::read_to_string(out.join("eratio_curves.csv")).unwrap();
    assert_eq!(curves.lines().next().unwrap(), "epoch,bce-astra,gmn-astra");
    assert_eq!(curves.lines().count(), 21);

    let rebuilt = dir.path().join("rep");
    ok(&["report", "--runs", &s(&out.join("runs.csv")), "--out", &s(&rebuilt)]);
    assert_eq!(
        fs::read(out.join("report.json")).unwrap(),
        fs::read(rebuilt.join("report.json")).unwrap()
    );
    assert_eq!(
        fs::read(out.join("report.txt")).unwrap(),
        fs::read(rebuilt.join("report.txt")).unwrap()
    );

    let gmn_only = dir.path().join("g");
    ok(&[
        "cv",
        "--dataset",
        &s(&data),
        "--repeats",
        "1",
        "--epochs",
        "5",
        "--methods",
        "gmn,bce",
        "--loss",
        "gmn",
        "--out",
        &s(&gmn_only),
    ]);
    let runs = fs::read_to_string(gmn_only.join("runs.csv")).unwrap();
    assert!(runs.lines().skip(1).all(|l| l.starts_with("gmn,")));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let data = toy(dir.path());
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    let args = |o: &Path| {
        vec![
            "cv".to_string(),
            "--dataset".into(),
            s(&data),
            "--repeats".into(),
            "2".into(),
            "--epochs".into(),
            "15".into(),
            "--out".into(),
            s(o),
        ]
    };
    let mut a = args(&one);
    a.extend(["--jobs".into(), "1".into()]);
    let mut b = args(&four);
    b.extend(["--jobs".into(), "4".into()]);
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    for f in [
        "runs.csv",
        "report.json",
        "report.txt",
        "eratio_curves.csv",
        "manifest.toml",
    ] {
        assert_eq!(fs::read(one.join(f)).unwrap(), fs::read(four.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn undersample_validation_and_determinism() {
    let dir = TempDir::new().unwrap();
    let data = toy(dir.path());
    let o = |n: &str| s(&dir.path().join(n));
    let res = astra(&[
        "undersample",
        "--dataset",
        &s(&data),
        "--keep-positives",
        "21",
        "--out",
        &o("x"),
    ]);
    assert_eq!(res.status.code(), Some(2));
    ok(&[
        "undersample",
        "--dataset",
        &s(&data),
        "--keep-positives",
        "4",
        "--seed",
        "8",
        "--out",
        &o("a"),
    ]);
    ok(&[
        "undersample",
        "--dataset",
        &s(&data),
        "--keep-positives",
        "4",
        "--seed",
        "8",
        "--out",
        &o("b"),
    ]);
    let ra = fs::read_to_string(dir.path().join("a/retained.json")).unwrap();
    assert_eq!(ra, fs::read_to_string(dir.path().join("b/retained.json")).unwrap());
    let v: serde_json::Value = serde_json::from_str(&ra).unwrap();
    assert_eq!(v["retained_positive_rows"].as_array().unwrap().len(), 4);
    assert_eq!(v["rows"], 184);
    let text = fs::read_to_string(dir.path().join("a/undersampled.txt")).unwrap();
    assert_eq!(text.lines().count(), 184);
    assert_eq!(
        fs::read_to_string(&data).unwrap().lines().count(),
        200,
        "input untouched"
    );
}

#[test]
fn csv_input_is_accepted() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("label,a,b\n");
    for i in 0..60 {
        let pos = i % 6 == 0;
        text += &format!(
            "{},{},{}\n",
            u8::from(pos),
            i as f64 * 0.1,
            if pos { 2.0 } else { -1.0 }
        );
    }
    let path = dir.path().join("d.csv");
    fs::write(&path, text).unwrap();
    ok(&[
        "train",
        "--dataset",
        &s(&path),
        "--epochs",
        "3",
        "--out",
        &s(&dir.path().join("o")),
    ]);
}
