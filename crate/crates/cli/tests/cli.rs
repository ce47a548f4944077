use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_joint-ood"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, seed: &str) -> Output {
    run(&[
        "gen-data",
        "--out-dir",
        dir.to_str().unwrap(),
        "--num-domains",
        "3",
        "--train-size",
        "240",
        "--dev-size",
        "80",
        "--test-size",
        "80",
        "--ood-ratio",
        "0.25",
        "--seed",
        seed,
    ])
}

fn report_value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {report}"))
        .parse()
        .unwrap()
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&[
            "gen-data",
            "--out-dir",
            d.path().to_str().unwrap(),
            "--num-domains",
            "10",
            "--train-size",
            "400",
            "--dev-size",
            "100",
            "--test-size",
            "100",
            "--ood-ratio",
            "0.25",
            "--seed",
            "7",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "manifest"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let manifest = fs::read_to_string(a.path().join("manifest")).unwrap();
    assert!(manifest.contains("train_ood = 100"), "{manifest}");
}

#[test]
fn missing_out_dir_is_usage_error() {
    let o = run(&["gen-data", "--num-domains", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out-dir"));
}

#[test]
fn one_domain_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["gen-data", "--out-dir", d.path().to_str().unwrap(), "--num-domains", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn bad_enum_and_unknown_config_key() {
    let o = run(&["train", "--mode", "both"]);
    assert_eq!(o.status.code(), Some(2));
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    fs::write(&cfg, "colour = red\n").unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn train_then_evaluate() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path();
    assert!(gen(data, "3").status.success());
    let model = data.join("model.ckpt");
    let cfg = data.join("run.cfg");
    fs::write(
        &cfg,
        "# small network\nchar_emb = 4\nchar_hidden = 4\nword_emb = 8\nword_hidden = 8\nhead_hidden = 8\nepochs = 5\n",
    )
    .unwrap();
    let p = |f: &str| data.join(f).to_str().unwrap().to_string();
    let o = run(&[
        "train",
        "--config",
        &p("run.cfg"),
        "--train",
        &p("train.jsonl"),
        "--dev",
        &p("dev.jsonl"),
        "--out-model",
        model.to_str().unwrap(),
        "--epochs",
        "3",
        "--dcw",
        "on",
        "--seed",
        "5",
    ]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(o.status.success(), "{err}");
    // Flag beats file; resolved config goes to stderr.
    assert!(err.contains("epochs = 3"), "{err}");
    assert!(err.contains("word_emb = 8"), "{err}");
    let out = stdout(&o);
    let best: usize = out
        .lines()
        .find_map(|l| l.strip_prefix("best_epoch="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((1..=3).contains(&best));
    let log = fs::read_to_string(format!("{}.log.csv", model.display())).unwrap();
    assert_eq!(log.lines().count(), 4);

    let o = run(&["evaluate", "--model", model.to_str().unwrap(), "--test", &p("test.jsonl"), "--target-far", "1.0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    let keys: Vec<&str> = report.lines().map(|l| l.split('=').next().unwrap()).collect();
    assert_eq!(keys, ["total", "gold_ind", "gold_ood", "accuracy", "far", "frr", "threshold"]);
    assert_eq!(report_value(&report, "threshold"), 0.0);
    assert_eq!(report_value(&report, "total"), 80.0);

    for target in ["0", "0.05", "0.2"] {
        let o = run(&["evaluate", "--model", model.to_str().unwrap(), "--test", &p("test.jsonl"), "--target-far", target]);
        assert!(o.status.success());
        assert!(report_value(&stdout(&o), "far") <= target.parse::<f64>().unwrap());
    }

    let o = run(&[
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--test",
        &p("test.jsonl"),
        "--tune-on",
        "dev",
        "--dev",
        &p("dev.jsonl"),
    ]);
    assert!(o.status.success());
    let o = run(&["evaluate", "--model", model.to_str().unwrap(), "--test", &p("test.jsonl"), "--tune-on", "dev"]);
    assert_eq!(o.status.code(), Some(2));

    // A test set with no OOD utterance cannot be tuned.
    let ind: String = fs::read_to_string(data.join("test.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"OOD\""))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(data.join("ind.jsonl"), ind).unwrap();
    let o = run(&["evaluate", "--model", model.to_str().unwrap(), "--test", &p("ind.jsonl")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_fails_cleanly() {
    let d = tempfile::tempdir().unwrap();
    assert!(gen(d.path(), "4").status.success());
    let bad = d.path().join("bad.ckpt");
    fs::write(&bad, b"not a model").unwrap();
    let o = run(&[
        "evaluate",
        "--model",
        bad.to_str().unwrap(),
        "--test",
        d.path().join("test.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}
