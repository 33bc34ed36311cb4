//! Runs the `lobforge` binary end to end on a synthetic fixture.

use std::{
    fs,
    path::{Path, PathBuf},
    process::{Command, Output},
};

const RUN_TOML: &str = r#"
seed = 7

[sample]
aggregation = "5w"
horizon_ms = 200

[train]
arch = "SimpleCNN"
epochs = 2
batch_size = 32
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Fixture {
        let f = Fixture { dir: tempfile::tempdir().unwrap() };
        fs::write(f.path("run.toml"), RUN_TOML).unwrap();
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_lobforge"))
            .current_dir(self.dir.path())
            .env("LOBFORGE_LOG", "warn")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "lobforge {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    /// 1000-snapshot random-walk tape with trade prints.
    fn tape(&self) {
        self.ok(&["--seed", "1", "synthetic", "random-walk", "--trades-per-step", "3", "--out", "syn"]);
    }
}

/// Prefixes the fixture's run config.
fn with<'a>(rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--config", "run.toml"];
    v.extend_from_slice(rest);
    v
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn full_pipeline_emits_every_artifact() {
    let f = Fixture::new();
    f.tape();
    let book_before = fs::read(f.path("syn/book.jsonl")).unwrap();
    f.ok(&with(&["ingest", "syn/book.jsonl", "--trades", "syn/trades.jsonl", "--out", "clean/book.jsonl"]));
    f.ok(&with(&["embed", "clean/book.jsonl", "--limit", "8", "--out", "frames"]));
    f.ok(&with(&["sample", "clean/book.jsonl", "--out", "set.lobs"]));
    f.ok(&with(&["train", "set.lobs", "--out", "model.lobm"]));
    f.ok(&with(&["predict", "model.lobm", "set.lobs", "--out", "pred/forecasts.csv"]));
    f.ok(&with(&["backtest", "model.lobm", "clean/book.jsonl", "--trades", "clean/book.trades.jsonl", "--out", "bt"]));
    f.ok(&["--seed", "2", "--symbol", "ETH", "synthetic", "mean-reverting", "--trades-per-step", "2", "--out", "syn2"]);
    f.ok(&with(&["analyze", "syn/trades.jsonl", "syn2/trades.jsonl", "--bucket-ms", "2000", "--out", "an"]));
    f.ok(&with(&["report", "bt", "an", "pred", "--out", "report.html"]));

    for rel in [
        "clean/book.jsonl",
        "clean/book.jsonl.provenance.json",
        "clean/book.trades.jsonl",
        "frames/frame_00000_1600000000000.png",
        "frames/merged_window.png",
        "set.lobs",
        "model.lobm",
        "pred/forecasts.csv",
        "pred/forecasts.csv.metrics.json",
        "bt/pnl.csv",
        "bt/pnl.csv.provenance.json",
        "bt/summary.json",
        "bt/pnl.svg",
        "an/corr.csv",
        "an/corr.svg",
        "report.html",
    ] {
        assert!(f.path(rel).is_file(), "missing {rel}");
    }
    assert_eq!(fs::read_dir(f.path("frames")).unwrap().count(), 9);
    assert_eq!(fs::read(f.path("syn/book.jsonl")).unwrap(), book_before, "input tape was modified");

    let summary = read_json(&f.path("bt/summary.json"));
    assert_eq!(summary["provenance"]["seed"], 7);
    assert_eq!(summary["provenance"]["config"]["train"]["epochs"], 2);
    assert!(summary["summary"]["steps"].as_u64().unwrap() > 0);
    let forecasts = fs::read_to_string(f.path("pred/forecasts.csv")).unwrap();
    assert!(forecasts.lines().count() > 100);
    assert!(fs::read_to_string(f.path("bt/pnl.svg")).unwrap().contains("<metadata>"));
    assert!(fs::read_to_string(f.path("report.html")).unwrap().contains("<svg"));
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let f = Fixture::new();
    f.tape();
    f.ok(&with(&["sample", "syn/book.jsonl", "--out", "set.lobs"]));
    f.ok(&with(&["train", "set.lobs", "--out", "a.lobm"]));
    f.ok(&with(&["--threads", "1", "train", "set.lobs", "--out", "b.lobm"]));
    assert_eq!(fs::read(f.path("a.lobm")).unwrap(), fs::read(f.path("b.lobm")).unwrap());

    // provenance names the input files, so both replays use the same checkpoint
    for (threads, out) in [("0", "a"), ("1", "b")] {
        let csv = format!("{out}/f.csv");
        f.ok(&with(&["--threads", threads, "predict", "a.lobm", "set.lobs", "--out", &csv]));
        f.ok(&with(&["--threads", threads, "backtest", "a.lobm", "syn/book.jsonl", "--trades", "syn/trades.jsonl", "--out", out]));
    }
    for rel in ["f.csv", "pnl.csv", "summary.json", "pnl.svg"] {
        let a = fs::read(f.path(&format!("a/{rel}"))).unwrap();
        let b = fs::read(f.path(&format!("b/{rel}"))).unwrap();
        assert!(a == b, "{rel} differs between runs");
    }
}

#[test]
fn embedded_config_reproduces_the_artifact() {
    let f = Fixture::new();
    f.tape();
    f.ok(&["--config", "run.toml", "--horizon-ms", "400", "sample", "syn/book.jsonl", "--out", "a.lobs"]);
    // the sample set carries its resolved config inline
    f.ok(&["--config", "a.lobs", "sample", "syn/book.jsonl", "--out", "b.lobs"]);
    f.ok(&["--config", "a.lobs.provenance.json", "sample", "syn/book.jsonl", "--out", "c.lobs"]);
    let bytes = fs::read(f.path("a.lobs")).unwrap();
    assert_eq!(&bytes[..4], b"LOBS");
    assert_eq!(bytes, fs::read(f.path("b.lobs")).unwrap());
    assert_eq!(bytes, fs::read(f.path("c.lobs")).unwrap());
}

#[test]
fn short_horizon_is_rejected() {
    let f = Fixture::new();
    f.tape();
    let out = f.run(&["--horizon-ms", "100", "sample", "syn/book.jsonl", "--out", "x.lobs"]);
    assert_eq!(out.status.code(), Some(5));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("horizon 100 ms is shorter than the snapshot interval 200 ms"), "{err}");
    assert!(!f.path("x.lobs").exists());
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let f = Fixture::new();
    f.tape();
    let code = |args: &[&str]| f.run(args).status.code();
    assert_eq!(code(&["--arch", "ResNet", "sample", "syn/book.jsonl", "--out", "x"]), Some(3));
    assert_eq!(code(&["--aggregation", "30", "sample", "syn/book.jsonl", "--out", "x"]), Some(3));
    fs::write(f.path("bad.jsonl"), "{\"ts_ms\":1}\n").unwrap();
    assert_eq!(code(&["ingest", "bad.jsonl", "--out", "x.jsonl"]), Some(4));
    assert_eq!(code(&["train", "missing.lobs", "--out", "x.lobm"]), Some(9));
    f.ok(&["--aggregation", "5w", "--horizon-ms", "200", "sample", "syn/book.jsonl", "--out", "set.lobs"]);
    assert_eq!(code(&["--arch", "SimpleCNN_2D", "train", "set.lobs", "--out", "x.lobm"]), Some(6));
    assert_eq!(code(&["no-such-command"]), Some(2));
}
