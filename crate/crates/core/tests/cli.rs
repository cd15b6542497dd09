mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{fixture, record_cassette, shipped_rules};

fn camtax(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camtax")).current_dir(dir).args(args).output().expect("spawn camtax")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A config over the fixture corpus with the batch sizes the shared
/// recording helper uses.
fn write_config(dir: &Path, backend: &str) {
    let text = format!(
        "corpus_root = {corpus:?}\nrules_dir = {rules:?}\nruns_dir = \"runs\"\n\n[backend]\n{backend}\n\n\
         [identify]\nbatch_size = 3\n\n[classify]\nsummaries_per_request = 4\n\n[taxonomy]\ncategories_per_request = 3\n",
        corpus = fixture("corpus"),
        rules = shipped_rules(),
    );
    fs::write(dir.join("camtax.toml"), text).unwrap();
}

const SIMULATED: &str = "kind = \"scripted\"\nresponder = \"simulated\"";

fn payload(path: &Path) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["payload"].clone()
}

#[test]
fn run_simulated_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), SIMULATED);
    let out = camtax(tmp.path(), &["--run-id", "r1", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run = tmp.path().join("runs/r1");
    for name in ["corpus.json", "slices.json", "categories.json", "taxonomy.json", "growth.csv", "violations.jsonl", "manifest.json"] {
        assert!(run.join(name).exists(), "missing {name}");
    }
    let tax = payload(&run.join("taxonomy.json"));
    assert!(!tax["nodes"].as_array().unwrap().is_empty());

    let again = camtax(tmp.path(), &["--run-id", "r1", "taxonomy", "validate"]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert!(stdout(&again).starts_with("ok:"));
}

#[test]
fn replay_reproduces_the_recording() {
    let tmp = tempfile::tempdir().unwrap();
    let cassette = tmp.path().join("cassette.jsonl");
    record_cassette(&fixture("corpus"), &tmp.path().join("runs"), &cassette);
    write_config(tmp.path(), &format!("kind = \"record_replay\"\ncassette = {cassette:?}"));

    let out = camtax(tmp.path(), &["--run-id", "replayed", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let a = fs::read(tmp.path().join("runs/recording/taxonomy.json")).unwrap();
    let b = fs::read(tmp.path().join("runs/replayed/taxonomy.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cassette_miss_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cassette = tmp.path().join("empty.jsonl");
    fs::write(&cassette, "").unwrap();
    write_config(tmp.path(), &format!("kind = \"record_replay\"\ncassette = {cassette:?}"));
    let out = camtax(tmp.path(), &["identify"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("stage identify failed"), "{}", stderr(&out));
}

#[test]
fn bad_config_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("camtax.toml"), "corpus_root = \".\"\ncolour = \"blue\"\n[backend]\nkind = \"scripted\"\n").unwrap();
    let out = camtax(tmp.path(), &["ingest"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    let missing = camtax(tmp.path(), &["--config", "nope.toml", "ingest"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn cyclic_taxonomy_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = camtax(tmp.path(), &["taxonomy", "validate", fixture("cyclic_taxonomy.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("violation: cycle"), "{}", stdout(&out));
}

#[test]
fn eval_with_counts_file() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), SIMULATED);
    let counts = fixture("table1_counts.json");
    let out = camtax(tmp.path(), &["--run-id", "m", "eval", "--counts", counts.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("0.905"), "{}", stdout(&out));
    let metrics = payload(&tmp.path().join("runs/m/metrics.json"));
    let acc = metrics["accuracy"].as_f64().unwrap();
    assert!((acc - 648.0 / 716.0).abs() < 1e-12);
}

#[test]
fn dry_run_makes_no_requests() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), SIMULATED);
    let out = camtax(tmp.path(), &["--dry-run", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("identify") && text.contains("requests"), "{text}");
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn rules_check_without_config() {
    let tmp = tempfile::tempdir().unwrap();
    let rules = shipped_rules();
    let corpus = fixture("corpus");
    let out = camtax(tmp.path(), &["rules", "check", "--rules", rules.to_str().unwrap(), "--corpus", corpus.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows: Vec<serde_json::Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let hit = |prog: &str, rule: &str| rows.iter().any(|r| r["program_id"] == prog && r["rule_name"] == rule);
    assert!(hit("derive.py", "pbkdf2_iterations"));
    assert!(hit("ShortTag.java", "gcm_tag_length"));
    assert!(hit("legacy_init.c", "openssl_init_cleanse"));
    assert!(!rows.iter().any(|r| r["program_id"] == "sha256_ok.py"));
}

#[test]
fn rules_emit_for_a_category() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), SIMULATED);
    let skeleton = shipped_rules().join("gcm_tag_length.rule");
    let out = camtax(
        tmp.path(),
        &["--run-id", "e", "rules", "emit", "--category", "truncated gcm tag", "--skeleton", skeleton.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("g[0] >= 96"), "{text}");
    assert!(tmp.path().join("runs/e/rules/gcm_tag_length.rule").exists());
}
