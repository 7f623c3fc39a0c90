use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn workdir() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in ["docs.jsonl", "claims.jsonl", "tempver.toml"] {
        std::fs::copy(fixtures().join(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn tempver(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tempver")).args(args).current_dir(dir).output().unwrap()
}

fn rows(path: &Path) -> (Value, Vec<Value>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().map(|l| serde_json::from_str::<Value>(l).unwrap());
    let header = lines.next().unwrap();
    (header["header"].clone(), lines.collect())
}

#[test]
fn score_respects_k() {
    let dir = workdir();
    let out = tempver(dir.path(), &["score", "--offline", "--seed", "7", "--k", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, scored) = rows(&dir.path().join("scored.jsonl"));
    assert_eq!(header["stage"], "score");
    assert_eq!(header["config"]["k"], 2);
    assert_eq!(scored.len(), 10);
    for s in &scored {
        let n = s["ranked"].as_array().unwrap().len();
        assert!((1..=2).contains(&n), "{s}");
    }
}

#[test]
fn score_then_verify() {
    let dir = workdir();
    assert!(tempver(dir.path(), &["score", "--offline", "--seed", "7"]).status.success());
    let out = tempver(dir.path(), &["verify", "--offline", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, verdicts) = rows(&dir.path().join("verdicts.jsonl"));
    assert_eq!(verdicts.len(), 10);
    for v in &verdicts {
        assert_eq!(v["raw_response_digest"].as_str().unwrap().len(), 64);
    }
    let (_, preds) = rows(&dir.path().join("predictions.jsonl"));
    let c01 = preds.iter().find(|p| p["claim_id"] == "c01").unwrap();
    assert_eq!(c01["label"], "REFUTES");

    let out = tempver(dir.path(), &["evaluate", "--offline"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["claims"], 10);
}

#[test]
fn pipeline_is_deterministic_across_thread_counts() {
    let a = workdir();
    let b = workdir();
    assert!(tempver(a.path(), &["pipeline", "--offline", "--seed", "3", "--jobs", "1"]).status.success());
    assert!(tempver(b.path(), &["pipeline", "--offline", "--seed", "3", "--jobs", "4"]).status.success());
    for f in ["scored.jsonl", "verdicts.jsonl", "predictions.jsonl", "report.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn k_sweep_writes_one_row_per_budget() {
    let dir = workdir();
    assert!(tempver(dir.path(), &["pipeline", "--offline", "--seed", "7", "--k-sweep", "3"]).status.success());
    let csv = std::fs::read_to_string(dir.path().join("k_sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,label_accuracy,fever_score");
    assert_eq!(lines.len(), 4);
}

#[test]
fn train_writes_model_and_loss_curve() {
    let dir = workdir();
    let out = tempver(dir.path(), &["train", "--offline", "--seed", "1", "--epochs", "2", "--lr", "1e-3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    let out = tempver(dir.path(), &["pipeline", "--offline", "--seed", "1", "--model", "model.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = tempver(dir.path(), &["score", "--offline", "--model", "model.json", "--d", "16"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn augment_and_extract_events() {
    let dir = workdir();
    assert!(tempver(dir.path(), &["extract-events", "--offline"]).status.success());
    let events = std::fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
    assert!(events.lines().count() > 10);
    let out = tempver(dir.path(), &["augment", "--offline", "--seed", "2", "--rules", "ordering"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, recs) = rows(&dir.path().join("augmented.jsonl"));
    assert_eq!(header["stage"], "augment");
    assert!(recs.iter().any(|r| r["provenance"]["kind"] == "augmented"));
    assert!(recs.iter().all(|r| r["provenance"]["rule"] != "refute_duration"));
    assert_eq!(tempver(dir.path(), &["augment", "--rules", "calendar"]).status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = workdir();
    std::fs::write(dir.path().join("alt.toml"), "d = 16\nheads = 4\nk = 1\ncandidate_docs = 1\nseed = 9\n").unwrap();
    assert!(tempver(dir.path(), &["score", "--offline", "--config", "alt.toml", "--k", "2"]).status.success());
    let (header, _) = rows(&dir.path().join("scored.jsonl"));
    let cfg = &header["config"];
    assert_eq!((cfg["d"].as_u64(), cfg["heads"].as_u64(), cfg["k"].as_u64(), cfg["seed"].as_u64()), (Some(16), Some(4), Some(2), Some(9)));
    assert_eq!(cfg["train"]["seed"], 9);

    std::fs::remove_file(dir.path().join("tempver.toml")).unwrap();
    assert!(tempver(dir.path(), &["score", "--offline", "--d", "16", "--heads", "2"]).status.success());
    let (header, _) = rows(&dir.path().join("scored.jsonl"));
    assert_eq!(header["config"]["k"], 3);
    assert_eq!(header["config"]["candidate_docs"], 2);
}

#[test]
fn exit_codes() {
    let dir = workdir();
    assert_eq!(tempver(dir.path(), &["score", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(tempver(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(tempver(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(tempver(dir.path(), &["score", "--offline", "--docs", "missing.jsonl"]).status.code(), Some(1));
    assert_eq!(tempver(dir.path(), &["score", "--offline", "--k", "0"]).status.code(), Some(2));
    assert_eq!(tempver(dir.path(), &["score", "--offline", "--d", "30"]).status.code(), Some(2));
    assert_eq!(tempver(dir.path(), &["score", "--config", "nope.toml"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "colour = 1\n").unwrap();
    assert_eq!(tempver(dir.path(), &["score", "--config", "bad.toml"]).status.code(), Some(2));
    std::fs::write(dir.path().join("claims.jsonl"), "{not json\n").unwrap();
    let out = tempver(dir.path(), &["score", "--offline"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn online_verify_without_endpoint_is_a_usage_error() {
    let dir = workdir();
    assert!(tempver(dir.path(), &["score", "--offline"]).status.success());
    assert_eq!(tempver(dir.path(), &["verify"]).status.code(), Some(2));
}
