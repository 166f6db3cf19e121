//! End-to-end behavior of the `ds3m` binary.

mod common;

use std::fs;
use std::path::Path;

use common::{ds3m, ds3m_ok, fixture};
use ds3m::checkpoint::Checkpoint;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn simulate_is_seeded_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ds3m_ok(&["simulate", "toy", "--seed", "4", "--out", s(&a)]);
    ds3m_ok(&["simulate", "toy", "--seed", "4", "--out", s(&b)]);
    assert_eq!(bytes(&a), bytes(&b));
    let text = String::from_utf8(bytes(&a)).unwrap();
    assert!(text.starts_with("y0,d_true,z0\n"));
    assert_eq!(text.lines().count(), 2001);

    let again = ds3m(&["simulate", "toy", "--seed", "5", "--out", s(&a)]);
    assert_eq!(again.status.code(), Some(2));
    ds3m_ok(&["simulate", "toy", "--seed", "5", "--out", s(&a), "--force"]);
    assert_ne!(bytes(&a), bytes(&b));

    let l = dir.path().join("l.csv");
    ds3m_ok(&["simulate", "lorenz", "--seed", "1", "--out", s(&l)]);
    let head = String::from_utf8(bytes(&l)).unwrap().lines().next().unwrap().to_string();
    assert!(head.starts_with("y0,y1,y2,y3,y4,y5,y6,y7,y8,y9,d_true"));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, fs::read_to_string(fixture("quick_toy.toml")).unwrap().replace("[train]", "[train]\nlearning_rate = 0.1")).unwrap();
    let out = ds3m(&["train", "--config", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let missing = dir.path().join("missing.toml");
    fs::write(&missing, fs::read_to_string(fixture("synthetic.toml")).unwrap().replace("synthetic.csv", "nowhere.csv")).unwrap();
    assert_eq!(ds3m(&["train", "--config", s(&missing), "--out", s(&dir.path().join("y"))]).status.code(), Some(3));

    assert_eq!(ds3m(&["evaluate", "--prediction", "nope.csv", "--truth", "nope.csv", "--out", s(&dir.path().join("m.txt"))]).status.code(), Some(3));
    assert_eq!(ds3m(&["predict"]).status.code(), Some(2));
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = || {
        let data = fixture("synthetic.csv");
        ds3m_ok(&["train", "--config", s(&fixture("synthetic.toml")), "--out", s(&d.join("train")), "--force"]);
        let ck = d.join("train/checkpoint.ckpt");
        ds3m_ok(&["predict", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&d.join("f.csv")), "--last", "50", "--seed", "3", "--force"]);
        ds3m_ok(&["segment", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&d.join("s.csv")), "--last", "50", "--seed", "3", "--force"]);
        ds3m_ok(&["evaluate", "--prediction", s(&d.join("f.csv")), "--truth", s(&data), "--out", s(&d.join("m.txt")), "--force"]);
        ["train/checkpoint.ckpt", "train/train_log.tsv", "train/manifest.toml", "f.csv", "s.csv", "m.txt"].map(|n| bytes(&d.join(n)))
    };
    let first = run();
    let second = run();
    assert_eq!(first, second);

    let metrics = String::from_utf8(first[5].clone()).unwrap();
    for key in ["rmse=", "mape=", "coverage="] {
        let v: f64 = metrics.lines().find_map(|l| l.strip_prefix(key)).unwrap().parse().unwrap();
        assert!(v.is_finite());
    }
    let forecasts = String::from_utf8(first[3].clone()).unwrap();
    assert_eq!(forecasts.lines().count(), 51);
    assert!(forecasts.starts_with("t,mean_load,mean_temperature,lower_load,lower_temperature,upper_load,upper_temperature,regime,p0,p1\n"));
}

#[test]
fn resume_never_loses_the_recorded_best() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = fixture("quick_toy.toml");
    ds3m_ok(&["train", "--config", s(&cfg), "--out", s(&d.join("a"))]);
    ds3m_ok(&["train", "--config", s(&cfg), "--out", s(&d.join("b")), "--resume", s(&d.join("a/checkpoint.ckpt"))]);
    let a = Checkpoint::load(&d.join("a/checkpoint.ckpt")).unwrap();
    let b = Checkpoint::load(&d.join("b/checkpoint.ckpt")).unwrap();
    assert!(b.best_val_loss.unwrap() <= a.best_val_loss.unwrap());
    let manifest = fs::read_to_string(d.join("b/manifest.toml")).unwrap();
    assert!(manifest.contains("resumed_from"));
}

#[test]
fn report_replays_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ds3m_ok(&["report", "--config", s(&fixture("quick_toy.toml")), "--out", s(&d.join("r"))]);
    for n in ["data.csv", "checkpoint.ckpt", "train_log.tsv", "forecasts.csv", "segmentation.csv", "metrics.txt", "manifest.toml"] {
        assert!(d.join("r").join(n).exists(), "{n}");
    }
    ds3m_ok(&["report", "--config", s(&d.join("r/manifest.toml")), "--out", s(&d.join("replay"))]);
    for n in ["data.csv", "checkpoint.ckpt", "forecasts.csv", "segmentation.csv", "metrics.txt"] {
        assert_eq!(bytes(&d.join("r").join(n)), bytes(&d.join("replay").join(n)), "{n}");
    }
    let again = ds3m(&["report", "--config", s(&fixture("quick_toy.toml")), "--out", s(&d.join("r"))]);
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn baseline_checkpoints_forecast_but_do_not_segment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("base.toml");
    let text = fs::read_to_string(fixture("synthetic.toml")).unwrap().replace("[model]", "[model]\nfamily = \"baseline-gru\"");
    fs::write(&cfg, text.replace("\"synthetic.csv\"", &format!("{:?}", fixture("synthetic.csv")))).unwrap();
    ds3m_ok(&["train", "--config", s(&cfg), "--out", s(&d.join("t"))]);
    let ck = d.join("t/checkpoint.ckpt");
    assert!(fs::read_to_string(&ck).unwrap().contains("family = \"baseline-gru\""));
    let data = fixture("synthetic.csv");
    ds3m_ok(&["predict", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&d.join("f.csv"))]);
    assert!(fs::read_to_string(d.join("f.csv")).unwrap().starts_with("t,mean_load,mean_temperature,lower_load,lower_temperature,upper_load,upper_temperature\n"));
    assert_eq!(ds3m(&["segment", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&d.join("s.csv"))]).status.code(), Some(2));
}
