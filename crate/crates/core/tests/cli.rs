use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dacl::data::load_corpus;

fn dacl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dacl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// A small corpus plus a fast config in `dir`.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let out = dacl(&[
        "synth",
        "--out",
        &s(&data),
        "--labeled",
        "40",
        "--unlabeled",
        "80",
        "--valid",
        "20",
        "--test",
        "40",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let config = dir.join("c.txt");
    fs::write(&config, "extractor_hidden=16\nshared_dim=8\ndomain_dim=4\nc1_hidden=8\nc2_hidden=4\ndisc_hidden=8\nepochs=2\n").unwrap();
    (data.join("manifest.tsv"), config)
}

#[test]
fn gradcheck_passes_and_catches_fault() {
    let ok = dacl(&["gradcheck", "--instances", "5"]);
    assert_eq!(code(&ok), 0);
    let text = String::from_utf8_lossy(&ok.stdout);
    for op in dacl::autodiff::check::registered_ops() {
        let lines = text
            .lines()
            .filter(|l| l.split_whitespace().nth(1) == Some(op))
            .count();
        assert_eq!(lines, 1, "{op}");
    }
    let bad = dacl(&[
        "gradcheck",
        "--instances",
        "3",
        "--inject-fault",
        "matmul-sign",
    ]);
    assert_eq!(code(&bad), 4);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL matmul"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&dacl(&["train", "--out", "x", "--no-such-flag"])), 1);
    assert_eq!(code(&dacl(&["frobnicate"])), 1);
}

#[test]
fn synth_is_loadable_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(
            code(&dacl(&[
                "synth",
                "--out",
                &s(d),
                "--seed",
                "9",
                "--unlabeled",
                "50"
            ])),
            0
        );
    }
    let ds = load_corpus(&a.join("manifest.tsv")).unwrap();
    assert_eq!(ds.num_domains(), 3);
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
    let one = dir.path().join("one");
    assert_eq!(
        code(&dacl(&[
            "synth",
            "--out",
            &s(&one),
            "--domains",
            "1",
            "--unlabeled",
            "20"
        ])),
        0
    );
    assert_eq!(
        load_corpus(&one.join("manifest.tsv"))
            .unwrap()
            .num_domains(),
        1
    );
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = fixture(dir.path());
    let run = dir.path().join("run");
    let out = dacl(&[
        "train",
        "--config",
        &s(&config),
        "--data",
        &s(&data),
        "--out",
        &s(&run),
        "--seed",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "run_manifest.txt",
        "metrics.csv",
        "snapshot.bin",
        "report.csv",
        "report.txt",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest = fs::read_to_string(run.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("command=train") && manifest.contains("seed=2"));

    let eval = dir.path().join("eval");
    let out = dacl(&[
        "eval",
        "--config",
        &s(&run.join("run_manifest.txt")),
        "--snapshot",
        &s(&run.join("snapshot.bin")),
        "--out",
        &s(&eval),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(run.join("report.csv")).unwrap(),
        fs::read(eval.join("report.csv")).unwrap()
    );
}

#[test]
fn ablate_records_one_seed_for_three_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = fixture(dir.path());
    let run = dir.path().join("abl");
    let out = dacl(&[
        "ablate",
        "--config",
        &s(&config),
        "--data",
        &s(&data),
        "--out",
        &s(&run),
        "--seed",
        "5",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("report.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(
        rows.iter().map(|r| r[0]).collect::<Vec<_>>(),
        ["dacl", "dacl-no-d", "dacl-no-c2"]
    );
    assert!(rows.iter().all(|r| r[1] == "5"));
    for arm in ["none", "no-d", "no-c2"] {
        assert!(run.join(format!("{arm}_snapshot.bin")).exists());
    }
}

#[test]
fn uda_reports_target_against_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = fixture(dir.path());
    let run = dir.path().join("uda");
    let out = dacl(&[
        "uda",
        "--config",
        &s(&config),
        "--data",
        &s(&data),
        "--out",
        &s(&run),
        "--uda-target",
        "d2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("report.csv")).unwrap();
    assert!(csv.contains("dacl-uda") && csv.contains("mlp-uda"));
    assert!(fs::read_to_string(run.join("report.txt"))
        .unwrap()
        .contains("without labels"));
}

#[test]
fn conflicts_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = fixture(dir.path());
    let run = dir.path().join("bad");
    let out = dacl(&[
        "train",
        "--config",
        &s(&config),
        "--data",
        &s(&data),
        "--out",
        &s(&run),
        "--uda-target",
        "d0",
        "--folds",
        "5",
    ]);
    assert_eq!(code(&out), 1);
    assert!(!run.exists());
    let out = dacl(&[
        "train",
        "--config",
        &s(&config),
        "--data",
        &s(&data),
        "--out",
        &s(&run),
        "--uda-target",
        "nope",
    ]);
    assert_ne!(code(&out), 0);
    assert!(!run.join("metrics.csv").exists());
}

#[test]
fn missing_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dacl(&[
        "train",
        "--data",
        &s(&dir.path().join("absent.tsv")),
        "--out",
        &s(&dir.path().join("r")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = fixture(dir.path());
    let run = dir.path().join("sweep");
    let out = dacl(&[
        "sweep",
        "--config",
        &s(&config),
        "--data",
        &s(&data),
        "--out",
        &s(&run),
        "--param",
        "gamma",
        "--values",
        "0.1,1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("gamma,"));
}
