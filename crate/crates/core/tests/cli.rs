//! End-to-end runs of the `trls` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trls::config::RunConfig;
use trls::data::TimeSeriesDataset;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_trls"))
            .args(args)
            .env("TRLS_RUN_ROOT", self.path("runs"))
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    /// Runs a command that must succeed; returns the last stdout line.
    fn ok(&self, args: &[&str]) -> PathBuf {
        let out = self.run(args);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let stdout = String::from_utf8(out.stdout).unwrap();
        PathBuf::from(stdout.trim().lines().last().unwrap())
    }

    /// A small synthetic dataset and a desk config with `epochs` epochs.
    fn setup(&self, epochs: usize) -> (String, String) {
        let ds = self.path("ds");
        self.ok(&["synth", "--n", "30", "--seed", "1", "--out", ds.to_str().unwrap()]);
        let mut cfg = RunConfig::desk();
        cfg.ssl.epochs = epochs;
        let config = self.path("run.toml");
        fs::write(&config, cfg.to_toml().unwrap()).unwrap();
        (config.to_str().unwrap().into(), ds.to_str().unwrap().into())
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn synth_pretrain_then_linear_eval() {
    let ws = Workspace::new();
    let (config, ds) = ws.setup(2);
    let data = TimeSeriesDataset::load(Path::new(&ds)).unwrap();
    assert_eq!((data.n(), data.len, data.channels), (90, 256, 1));

    let run = ws.ok(&["pretrain", "--config", &config, "--data", &ds]);
    for f in [
        "config.toml",
        "train_log.jsonl",
        "report.json",
        "checkpoint/manifest.json",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    for key in ["epoch", "L", "L_prime", "L_total", "wall_ms"] {
        assert!(records[0].get(key).is_some(), "log lacks {key}");
    }
    let echoed = RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(echoed.ssl.epochs, 2);

    let ck = run.join("checkpoint");
    let eval = ws.ok(&[
        "linear-eval",
        "--config",
        &config,
        "--data",
        &ds,
        "--checkpoint",
        ck.to_str().unwrap(),
    ]);
    let report = json(&eval.join("report.json"));
    let acc = report["acc_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(report["folds"].as_array().unwrap().len(), 1);
}

#[test]
fn run_directories_are_never_reused() {
    let ws = Workspace::new();
    let a = ws.ok(&["synth", "--n", "10"]);
    let b = ws.ok(&["synth", "--n", "10"]);
    assert_ne!(a, b);
    assert!(a.exists() && b.exists());
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    assert_eq!(ws.run(&["--help"]).status.code(), Some(0));
    assert_eq!(ws.run(&["pretrain", "--bogus"]).status.code(), Some(1));
    assert_eq!(ws.run(&["no-such-verb"]).status.code(), Some(1));

    let bad = ws.path("bad.toml");
    fs::write(&bad, "[ssl]\nmomentum = 0.9\n").unwrap();
    let out = ws.run(&["pretrain", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("momentum"), "{}", stderr(&out));

    let out = ws.run(&["ablate", "--variant", "wo_everything"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("wo_multiscale"));

    let missing = ws.path("missing");
    let out = ws.run(&["linear-eval", "--data", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing"));
}

#[test]
fn checkpoint_geometry_mismatch_is_reported() {
    let ws = Workspace::new();
    let (config, ds) = ws.setup(1);
    let run = ws.ok(&["pretrain", "--config", &config, "--data", &ds]);
    let other = ws.path("other");
    ws.ok(&["synth", "--n", "10", "--len", "128", "--out", other.to_str().unwrap()]);
    let out = ws.run(&[
        "export-embeddings",
        "--data",
        other.to_str().unwrap(),
        "--checkpoint",
        run.join("checkpoint").to_str().unwrap(),
    ]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn ablate_sweep_and_robustness_tables() {
    let ws = Workspace::new();
    let (config, ds) = ws.setup(1);

    let run = ws.ok(&[
        "ablate",
        "--config",
        &config,
        "--data",
        &ds,
        "--variant",
        "wo_multiscale",
    ]);
    assert!(fs::read_to_string(run.join("config.toml"))
        .unwrap()
        .contains("wo_multiscale"));
    assert!(json(&run.join("report.json"))["mf1_mean"].is_number());

    let run = ws.ok(&["sweep-k", "--config", &config, "--data", &ds, "--ks", "1,2"]);
    let table = fs::read_to_string(run.join("table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "setting,runs,acc_mean,acc_std,mf1_mean,mf1_std");
    assert!(lines[1].starts_with("K=1,") && lines[2].starts_with("K=2,"));

    let run = ws.ok(&[
        "robustness",
        "--config",
        &config,
        "--data",
        &ds,
        "--dropout",
        "0,0.5",
        "--snr-db",
        "10",
    ]);
    let table = fs::read_to_string(run.join("table.csv")).unwrap();
    let settings: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(settings, ["dropout=0", "dropout=0.5", "snr_db=10"]);
}

#[test]
fn finetune_featurize_and_export() {
    let ws = Workspace::new();
    let (config, ds) = ws.setup(1);
    let run = ws.ok(&["pretrain", "--config", &config, "--data", &ds]);
    let ck = run.join("checkpoint");
    let ck = ck.to_str().unwrap();

    for extra in [&["--checkpoint", ck][..], &["--random-init"][..]] {
        let mut args = vec!["finetune", "--config", &config, "--data", &ds, "--fraction", "0.2"];
        args.extend_from_slice(extra);
        let run = ws.ok(&args);
        assert!(json(&run.join("report.json"))["acc_mean"].is_number());
    }

    let maps = ws.ok(&["featurize", "--config", &config, "--data", &ds]);
    let maps = TimeSeriesDataset::load(&maps).unwrap();
    // hop 8, window 32 on 256 samples: 29 frames of 17 bins
    assert_eq!((maps.n(), maps.len, maps.channels), (90, 29, 17));

    let out = ws.path("emb");
    ws.ok(&[
        "export-embeddings",
        "--config",
        &config,
        "--data",
        &ds,
        "--checkpoint",
        ck,
        "--mode",
        "finest",
        "--out",
        out.to_str().unwrap(),
    ]);
    let emb = TimeSeriesDataset::load(&out).unwrap();
    assert_eq!((emb.n(), emb.len, emb.channels), (90, 32, 1));
}

#[test]
fn convert_ecg_rows() {
    let ws = Workspace::new();
    let mut text = String::new();
    for label in [0, 3] {
        write!(text, "{label}").unwrap();
        for i in 0..5000 {
            write!(text, ",{}", i % 7).unwrap();
        }
        text.push('\n');
    }
    let csv = ws.path("ecg.csv");
    fs::write(&csv, text).unwrap();
    let out = ws.path("ecg");
    ws.ok(&[
        "convert",
        "--format",
        "ecg",
        "--input",
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let d = TimeSeriesDataset::load(&out).unwrap();
    assert_eq!((d.n(), d.len, d.channels), (2, 2500, 2));
    assert_eq!(d.labels(), &[0, 3]);
}
