use std::path::Path;
use std::process::{Command, Output};

use sft_experiments::idx::{encode_images, encode_labels, IdxImages};
use sft_experiments::report::{read_metrics_csv, MeanStd, Summary};

/// Small, fast experiment shared by most tests.
const SMALL: &[&str] = &[
    "--set", "data.n_train=400",
    "--set", "data.n_test=200",
    "--set", "data.dim=8",
    "--set", "data.classes=4",
    "--set", "train.hidden=16",
    "--set", "train.warmup_epochs=2",
    "--set", "train.total_epochs=6",
    "--set", "optim.lr_decay_epoch=4",
];

fn sft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sft"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sft(args);
    assert!(
        out.status.success(),
        "sft {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend_from_slice(SMALL);
    v
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn mask_fraction(audit: &Path) -> (usize, f64) {
    let mut r = csv::Reader::from_path(audit).unwrap();
    let noisy: Vec<bool> = r
        .records()
        .map(|rec| &rec.unwrap()[3] == "1")
        .collect();
    (noisy.len(), noisy.iter().filter(|&&b| b).count() as f64 / noisy.len() as f64)
}

#[test]
fn generate_writes_audit_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let files = ["train.bin", "test.bin", "audit.csv", "config.txt"];
    let stdout = ok(&["generate", "--out", p(&a), "--seed", "3"]);
    assert!(stdout.contains("realized noise fraction"));
    let first: Vec<Vec<u8>> = files.iter().map(|f| read(&a.join(f))).collect();
    ok(&["generate", "--out", p(&a), "--seed", "3"]);
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&read(&a.join(f)), bytes, "{f} differs");
    }
    // only experiment.out differs in another directory
    let b = dir.path().join("b");
    ok(&["generate", "--out", p(&b), "--seed", "3"]);
    for f in &files[..3] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs");
    }
    let (n, frac) = mask_fraction(&a.join("audit.csv"));
    assert_eq!(n, 5000);
    assert!((frac - 0.4).abs() < 0.03, "{frac}");

    let clean = dir.path().join("clean");
    ok(&["generate", "--out", p(&clean), "--set", "noise.rate=0"]);
    assert_eq!(mask_fraction(&clean.join("audit.csv")).1, 0.0);
}

#[test]
fn generate_reports_unwritable_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = sft(&["generate", "--out", p(&blocker.join("sub"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("file"));
}

#[test]
fn validation_errors_name_the_field() {
    let mut args = with_small(&["train"]);
    args.extend(["--set", "train.warmup_epochs=9"]);
    let out = sft(&args);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.warmup_epochs"));

    let out = sft(&["train", "--set", "loss.gamma=abc"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("loss.gamma"));

    let out = sft(&["train", "--repeats", "0"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("experiment.repeats"));
}

#[test]
fn repeats_summary_matches_metrics_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let stdout = ok(&with_small(&["train", "--out", p(&out), "--repeats", "3"]));
    assert!(stdout.contains("final test accuracy") && stdout.contains("F-score"));

    let summary = Summary::read(&out.join("summary.json")).unwrap();
    assert_eq!(summary.repeats, 3);
    let mut accs = Vec::new();
    let mut f1s = Vec::new();
    for r in 0..3 {
        let run = out.join(format!("run_{r}"));
        for f in ["metrics.jsonl", "selection.json", "bank.csv", "audit.csv", "model.bin"] {
            assert!(run.join(f).exists(), "{f}");
        }
        let rows = read_metrics_csv(&run.join("metrics.csv")).unwrap();
        assert_eq!(rows.len(), 6);
        accs.push(rows.last().unwrap().test_acc.unwrap());
        f1s.push(rows.last().unwrap().sel_f1);
        assert_eq!(summary.runs[r].train_seed, r as u64);
    }
    let acc = MeanStd::of(&accs);
    let f1 = MeanStd::of(&f1s);
    assert!((summary.test_acc.mean - acc.mean).abs() < 1e-9);
    assert!((summary.test_acc.std - acc.std).abs() < 1e-9);
    assert!((summary.sel_f1.mean - f1.mean).abs() < 1e-9);
    assert!((summary.sel_f1.std - f1.std).abs() < 1e-9);
    // distinct seeds give distinct runs
    assert_ne!(
        read(&out.join("run_0/metrics.csv")),
        read(&out.join("run_1/metrics.csv"))
    );
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&with_small(&["train", "--out", p(&a), "--seed", "5"]));
    ok(&with_small(&["train", "--out", p(&b), "--seed", "5"]));
    for f in ["metrics.csv", "metrics.jsonl", "bank.csv", "model.bin", "selection.json"] {
        assert_eq!(read(&a.join("run_0").join(f)), read(&b.join("run_0").join(f)), "{f}");
    }
}

#[test]
fn written_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&with_small(&["train", "--out", p(&a), "--set", "train.selector=small_loss"]));
    // the saved config carries experiment.out = a; --out redirects the rerun
    let b = dir.path().join("b");
    ok(&["train", "--config", p(&a.join("config.txt")), "--out", p(&b)]);
    assert_eq!(read(&a.join("run_0/metrics.csv")), read(&b.join("run_0/metrics.csv")));
    let text = String::from_utf8(read(&b.join("config.txt"))).unwrap();
    assert!(text.contains("train.selector = small_loss"));
}

#[test]
fn overrides_follow_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# test\nloss.gamma = 0.4\ntrain.total_epochs = 3\n").unwrap();
    let out = dir.path().join("o");
    let mut args = with_small(&["train", "--config", p(&cfg), "--out", p(&out)]);
    args.extend(["--set", "loss.gamma=0.6", "--set", "train.total_epochs=4"]);
    ok(&args);
    let text = String::from_utf8(read(&out.join("config.txt"))).unwrap();
    // SMALL sets total_epochs=6 after the file, the last --set wins
    assert!(text.contains("loss.gamma = 0.6"));
    assert!(text.contains("train.total_epochs = 4"));
    assert_eq!(read_metrics_csv(&out.join("run_0/metrics.csv")).unwrap().len(), 4);
}

#[test]
fn loading_generated_files_matches_inline_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&with_small(&["generate", "--out", p(&data), "--set", "noise.kind=pair"]));
    let inline = dir.path().join("inline");
    let loaded = dir.path().join("loaded");
    ok(&with_small(&["train", "--out", p(&inline), "--set", "noise.kind=pair"]));
    let set_dir = format!("data.dir={}", p(&data));
    ok(&with_small(&["train", "--out", p(&loaded), "--set", &set_dir]));
    assert_eq!(
        read(&inline.join("run_0/metrics.csv")),
        read(&loaded.join("run_0/metrics.csv"))
    );
    assert_eq!(read(&inline.join("run_0/audit.csv")), read(&data.join("audit.csv")));
}

#[test]
fn histogram_from_a_logged_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&with_small(&["train", "--out", p(&out), "--set", "train.keep_prediction_log=true"]));
    let run = out.join("run_0");
    let hist = dir.path().join("hist.csv");
    let stdout = ok(&["histogram", "--run", p(&run), "--out", p(&hist)]);
    assert!(stdout.contains("mean fluctuations"));
    let h = sft_experiments::report::Histogram::read_csv(&hist).unwrap();
    assert_eq!(h.clean.iter().sum::<usize>() + h.noisy.iter().sum::<usize>(), 400);

    let log = std::fs::read_to_string(run.join("prediction_log.csv")).unwrap();
    assert!(log.starts_with("index,e0,e1,e2,e3,e4,e5\n"));

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "index,true_label,given_label,noisy\n").unwrap();
    let out = sft(&[
        "histogram", "--log", p(&run.join("prediction_log.csv")), "--audit", p(&empty), "--out", p(&hist),
    ]);
    assert!(!out.status.success());

    let out = sft(&["histogram", "--run", p(dir.path()), "--out", p(&hist)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("prediction_log.csv"));
}

#[test]
fn sweep_writes_one_summary_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let mut args = with_small(&["sweep", "--out", p(&out), "--param", "loss.gamma"]);
    args.extend(["--values", "0.2,0.4,0.6,0.8"]);
    let stdout = ok(&args);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("loss.gamma=")).count(), 4);
    for g in ["0.2", "0.4", "0.6", "0.8"] {
        let s = Summary::read(&out.join(format!("loss.gamma={g}")).join("summary.json")).unwrap();
        assert_eq!(s.repeats, 1);
    }
    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["loss.gamma", "test_acc_mean", "test_acc_std", "sel_f1_mean", "sel_f1_std"]
    );
    assert_eq!(r.records().count(), 4);

    let bad = sft(&["sweep", "--out", p(&out), "--param", "loss.gamma", "--values", "0.2,x"]);
    assert!(!bad.status.success());
}

#[test]
fn trains_on_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let n = 60;
    let images = IdxImages {
        count: n,
        rows: 3,
        cols: 3,
        pixels: (0..n * 9)
            .map(|i| if (i % 9) == (i / 9) % 3 * 4 { 250 } else { (i * 37 % 40) as u8 })
            .collect(),
    };
    let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
    let paths: Vec<_> = ["tri", "trl", "tei", "tel"].iter().map(|f| dir.path().join(f)).collect();
    std::fs::write(&paths[0], encode_images(&images)).unwrap();
    std::fs::write(&paths[1], encode_labels(&labels)).unwrap();
    std::fs::write(&paths[2], encode_images(&images)).unwrap();
    std::fs::write(&paths[3], encode_labels(&labels)).unwrap();
    let sets: Vec<String> = [
        "data.kind=idx-file".to_string(),
        "data.classes=3".to_string(),
        format!("data.idx_train_images={}", p(&paths[0])),
        format!("data.idx_train_labels={}", p(&paths[1])),
        format!("data.idx_test_images={}", p(&paths[2])),
        format!("data.idx_test_labels={}", p(&paths[3])),
        "noise.rate=0.2".to_string(),
        "train.hidden=8".to_string(),
        "train.total_epochs=4".to_string(),
        "train.warmup_epochs=2".to_string(),
    ]
    .to_vec();
    let out = dir.path().join("out");
    let mut args = vec!["train", "--out", p(&out)];
    for s in &sets {
        args.extend(["--set", s.as_str()]);
    }
    ok(&args);
    assert_eq!(read_metrics_csv(&out.join("run_0/metrics.csv")).unwrap().len(), 4);

    // a truncated label file is a format error with its byte offset
    std::fs::write(&paths[1], &encode_labels(&labels)[..20]).unwrap();
    let out = sft(&args);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("format error at byte 20"), "{err}");
}
