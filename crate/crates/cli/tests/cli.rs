use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "data": {"snippets": 2, "channels": 4, "train_samples": 12, "test_samples": 12},
  "train": {"epochs": 2, "batch_size": 4, "deferred_every": 2,
            "model": {"snippets": 2, "channels": 4, "layers": 1, "heads": 1, "dilations": [1]}}
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgfusion"))
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn train_then_eval_reports_the_same_test_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", TINY);
    let ck = dir.path().join("ck").display().to_string();
    let trained = ok_json(&["train", "--config", &cfg, "--seed", "3", "--out", &ck]);
    assert_eq!(trained["epochs"], 2);
    assert_eq!(trained["steps"], 4);
    for key in ["acc", "wa_f1", "uar", "war", "confusion"] {
        assert!(trained["test"].get(key).is_some(), "missing {key}");
    }
    let evaluated = ok_json(&["eval", "--config", &cfg, "--seed", "3", "--checkpoint", &ck]);
    assert_eq!(evaluated["test"], trained["test"]);
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let four = TINY.replace("\"epochs\": 2", "\"epochs\": 4");
    let cfg2 = write(dir.path(), "two.json", TINY);
    let cfg4 = write(dir.path(), "four.json", &four);
    let ck = dir.path().join("ck").display().to_string();
    ok_json(&["train", "--config", &cfg2, "--out", &ck]);
    let resumed = ok_json(&["train", "--config", &cfg4, "--resume", &ck]);
    let straight = ok_json(&["train", "--config", &cfg4]);
    assert_eq!(resumed["final_loss"], straight["final_loss"]);
    assert_eq!(resumed["test"], straight["test"]);
}

#[test]
fn gradcheck_passes_on_a_small_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", TINY);
    let v = ok_json(&["gradcheck", "--config", &cfg]);
    assert_eq!(v["passed"], true);
    assert!(v["max_rel_err"].as_f64().unwrap() < 1e-4);
}

#[test]
fn gen_data_writes_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", TINY);
    let out = dir.path().join("data");
    let v = ok_json(&["gen-data", "--config", &cfg, "--out", &out.display().to_string()]);
    assert_eq!(v["files"].as_array().unwrap().len(), 2);
    assert!(out.join("train.safetensors").is_file());
    assert!(out.join("test.safetensors").is_file());
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_type = write(dir.path(), "a.json", r#"{"train": {"epochs": "many"}}"#);
    let unknown = write(dir.path(), "b.json", r#"{"trian": {}}"#);
    let mismatch = write(dir.path(), "c.json", r#"{"data": {"channels": 8}}"#);
    for cfg in [&bad_type, &unknown, &mismatch] {
        assert_eq!(run(&["train", "--config", cfg]).status.code(), Some(2), "{cfg}");
    }
    assert_eq!(run(&["gen-data"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--config", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn sample_produces_the_variant_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("variants");
    let v = ok_json(&["sample", "--seed", "5", "--out", &out.display().to_string()]);
    assert_eq!(v["balanced"]["total"], 14_462);
    assert_eq!(v["test"]["total"], 5_000);
    let test: Vec<Value> = serde_json::from_slice(&std::fs::read(out.join("test.json")).unwrap()).unwrap();
    assert_eq!(test.len(), 5_000);
    let again = ok_json(&["sample", "--seed", "5"]);
    assert_eq!(again, v);
}

const RECORDS: &str = r#"{"sample_id":"a","stage":"sA","set":"s1","category":"Fear","prior_label":"Fear","votes":["Fear","Fear","Fear"],"confidences":[0.9,0.8,0.7]}
{"sample_id":"b","stage":"sA","set":"s1","category":"Fear","prior_label":"Fear","votes":["Fear","Sadness","Tension"],"leader_vote":"Sadness"}
{"sample_id":"c","stage":"sA","set":"s2","category":"Neutral","prior_label":"Neutral","votes":["Neutral","Neutral","Sadness"]}
"#;

#[test]
fn annotation_subcommands_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let recs = write(dir.path(), "r.jsonl", RECORDS);

    let v = ok_json(&["resolve", "--records", &recs]);
    assert_eq!(v["resolved_by_stage"], serde_json::json!([2, 1, 0, 0]));
    assert_eq!(v["labels"][1]["label"], "Sadness");
    assert!((v["mean_confidence"].as_f64().unwrap() - 0.8).abs() < 1e-12);

    let v = ok_json(&["consistency", "--records", &recs, "--categories", "2"]);
    assert_eq!(v["sets"], 2);
    // 4 of 6 current labels match in s1, 2 of 3 in s2
    let s_a = 2.0 / 3.0;
    assert!((v["s_a"].as_f64().unwrap() - s_a).abs() < 1e-12);
    // set s1: one match, one undecided; set s2: one match
    assert!((v["s_r"].as_f64().unwrap() - (0.7 + 0.7) / 2.0).abs() < 1e-12);

    let v = ok_json(&["kappa", "--records", &recs]);
    assert_eq!(v["items"], 3);
    let table = write(dir.path(), "t.json", "[[3,0],[3,0],[0,3]]");
    let v = ok_json(&["kappa", "--table", &table]);
    assert_eq!(v["kappa"], 1.0);
    let flat = write(dir.path(), "f.json", "[[3,0],[3,0]]");
    assert_eq!(run(&["kappa", "--table", &flat]).status.code(), Some(3));

    let mos = write(dir.path(), "m.json", r#"[{"dataset":"x","ratings":[3,4,4,5]}]"#);
    let v = ok_json(&["mos", "--input", &mos]);
    assert_eq!(v["reports"][0]["mos"], 4.0);

    let missing = write(
        dir.path(),
        "n.jsonl",
        r#"{"sample_id":"z","votes":["Fear","Sadness","Tension"]}"#,
    );
    assert_eq!(run(&["resolve", "--records", &missing]).status.code(), Some(2));
}
