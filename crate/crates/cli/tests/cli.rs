use std::path::Path;
use std::process::{Command, Output};

use idtrace_cli::manifest::RunManifest;
use idtrace_cli::report::load_csv;

fn idtrace(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idtrace"))
        .current_dir(dir)
        .args(args)
        .env_remove("IDTRACE_ENDPOINT")
        .env_remove("IDTRACE_CACHE_DIR")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = idtrace(dir, args);
    assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    String::from_utf8(o.stdout).unwrap()
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap()
}

fn pooled_similarity(metrics: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(metrics).unwrap();
    v["pooled"]["sequence_similarity"].as_f64().unwrap()
}

const WORKED_GT: &str = r#"{"clips":[{"clip_id":"bean","frames":[
  {"index":1,"image":"synthetic://1"},{"index":2,"image":"synthetic://2"},{"index":3,"image":"synthetic://3"},
  {"index":4,"image":"synthetic://4"},{"index":5,"image":"synthetic://5"},{"index":6,"image":"synthetic://6"},
  {"index":7,"image":"synthetic://7"},{"index":8,"image":"synthetic://8"},{"index":9,"image":"synthetic://9"},
  {"index":10,"image":"synthetic://10"}],
  "identities":[{"label":"bean","frames":[2,4,5,7,8,9,10]}]}]}"#;
const WORKED_PRED: &str = r#"{"clip_id":"bean","identities":[{"label":"character 2","frames":[2,4,5,6,7,8]}]}"#;

#[test]
fn worked_example_report() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("gt.json"), WORKED_GT).unwrap();
    std::fs::write(t.path().join("pred.json"), WORKED_PRED).unwrap();
    ok(t.path(), &["evaluate", "--dataset", "gt.json", "--predictions", "pred.json", "--out", "ev"]);
    let m = read(t.path(), "ev/metrics.json");
    // 5/7, 10/15 and 10/21 at six decimals.
    assert!(m.contains("\"sequence_similarity\": 0.714286"), "{m}");
    assert!(m.contains("\"precision\": 0.666667"));
    assert!(m.contains("\"recall\": 0.476190"));
    let manifest = RunManifest::load(&t.path().join("ev/run.json")).unwrap();
    assert_eq!(manifest.command, "evaluate");
    assert_eq!(manifest.inputs.len(), 2);
    assert!(manifest.outputs.contains_key("metrics.json"));
}

#[test]
fn ground_truth_as_predictions_scores_one() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--clips", "4", "--frames", "10", "--ids", "3", "--out", "data"]);
    // The manifest's identities are valid prediction files.
    let data: serde_json::Value = serde_json::from_str(&read(t.path(), "data/dataset.json")).unwrap();
    let preds: Vec<serde_json::Value> = data["clips"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| serde_json::json!({"clip_id": c["clip_id"], "identities": c["identities"]}))
        .collect();
    std::fs::write(t.path().join("preds.json"), serde_json::to_string(&preds).unwrap()).unwrap();
    ok(t.path(), &["evaluate", "--dataset", "data/dataset.json", "--predictions", "preds.json", "--out", "ev"]);
    let v: serde_json::Value = serde_json::from_str(&read(t.path(), "ev/metrics.json")).unwrap();
    for k in ["precision", "recall", "sequence_similarity"] {
        assert_eq!(v["pooled"][k].as_f64(), Some(1.0));
    }
}

#[test]
fn usage_errors_exit_two() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("gt.json"), WORKED_GT).unwrap();
    let o = idtrace(t.path(), &["evaluate", "--dataset", "gt.json", "--predictions", "missing.json", "--out", "ev"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no such file"), "{}", stderr(&o));

    let o = idtrace(t.path(), &["caption", "--dataset", "gt.json", "--mode", "sideways", "--out", "c"]);
    assert_eq!(code(&o), 2);

    let o = idtrace(t.path(), &["report", "--runs"]);
    assert_eq!(code(&o), 2);

    std::fs::write(t.path().join("bad.toml"), "windows = 3\n").unwrap();
    let o = idtrace(t.path(), &["--config", "bad.toml", "synth", "--out", "s"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn clip_id_mismatch_is_skipped_unless_strict() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("gt.json"), WORKED_GT).unwrap();
    let preds = format!("[{WORKED_PRED}, {}]", WORKED_PRED.replace("\"bean\"", "\"other\""));
    std::fs::write(t.path().join("pred.json"), preds).unwrap();
    ok(t.path(), &["evaluate", "--dataset", "gt.json", "--predictions", "pred.json", "--out", "ev"]);
    let o = idtrace(t.path(), &["evaluate", "--dataset", "gt.json", "--predictions", "pred.json", "--out", "ev2", "--strict"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("other"));
}

#[test]
fn rice_captions_evaluate_to_one_and_replay_identically() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--clips", "3", "--frames", "12", "--ids", "3", "--out", "data"]);
    let base = ["--backend", "mock:vision", "--cache-dir", "fx"];
    let run = |extra: &[&str]| ok(t.path(), &[&base[..], extra].concat());
    run(&["caption", "--dataset", "data/dataset.json", "--mode", "rice", "--judge", "profile", "--out", "rice"]);
    ok(t.path(), &["evaluate", "--dataset", "data/dataset.json", "--predictions", "rice/predictions", "--out", "ev"]);
    assert_eq!(pooled_similarity(&read(t.path(), "ev/metrics.json")), 1.0);

    let out = ok(t.path(), &["rerun", "--manifest", "rice/run.json", "--out", "again"]);
    assert!(out.contains("identical"), "{out}");
    let a = RunManifest::load(&t.path().join("rice/run.json")).unwrap();
    let b = RunManifest::load(&t.path().join("again/run.json")).unwrap();
    assert_eq!(a.outputs, b.outputs);
    assert_ne!(a.run_id, b.run_id);
}

#[test]
fn replay_without_fixtures_is_a_partial_failure() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--clips", "2", "--frames", "4", "--ids", "2", "--out", "data"]);
    std::fs::create_dir(t.path().join("empty")).unwrap();
    let o = idtrace(
        t.path(),
        &["--backend", "replay", "--cache-dir", "empty", "caption", "--dataset", "data/dataset.json", "--mode", "st", "--out", "c"],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("unrecorded"));
    let m = RunManifest::load(&t.path().join("c/run.json")).unwrap();
    assert_eq!(m.exit_code, 1);
    assert_eq!(m.failures.len(), 2);
}

#[test]
fn extract_with_exact_judge_recovers_ground_truth() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--clips", "3", "--frames", "8", "--ids", "3", "--out", "data"]);
    ok(t.path(), &["--backend", "mock:vision", "caption", "--dataset", "data/dataset.json", "--mode", "st", "--judge", "exact", "--out", "st"]);
    ok(
        t.path(),
        &["--backend", "mock:vision", "extract", "--dataset", "data/dataset.json", "--captions", "st/captions", "--judge", "exact", "--out", "ex"],
    );
    assert!(t.path().join("ex/audit").is_dir());
    ok(t.path(), &["evaluate", "--dataset", "data/dataset.json", "--predictions", "ex/predictions", "--out", "ev"]);
    assert_eq!(pooled_similarity(&read(t.path(), "ev/metrics.json")), 1.0);
}

#[test]
fn sfs_search_finds_planted_feature_and_resumes() {
    let t = tempfile::tempdir().unwrap();
    let planted = ["--backend", "mock:planted:eyewear", "--cache-dir", "fx"];
    let out = ok(t.path(), &[&planted[..], &["sfs-search", "--max-n", "2", "--out", "s"]].concat());
    assert!(out.contains("sfs (1): eyewear"), "{out}");
    let sfs: serde_json::Value = serde_json::from_str(&read(t.path(), "s/sfs.json")).unwrap();

    let mut fixtures: Vec<_> = std::fs::read_dir(t.path().join("fx")).unwrap().map(|e| e.unwrap().path()).collect();
    fixtures.sort();
    let gone = fixtures.last().unwrap().clone();
    let saved = std::fs::read(&gone).unwrap();
    std::fs::remove_file(&gone).unwrap();
    let replay = ["--backend", "replay", "--model", "mock-planted:eyewear", "--cache-dir", "fx"];
    let o = idtrace(t.path(), &[&replay[..], &["sfs-search", "--max-n", "2", "--out", "r"]].concat());
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("--resume"));
    std::fs::write(&gone, saved).unwrap();
    ok(t.path(), &[&replay[..], &["sfs-search", "--max-n", "2", "--resume", "r/state.json", "--out", "r"]].concat());
    let resumed: serde_json::Value = serde_json::from_str(&read(t.path(), "r/sfs.json")).unwrap();
    assert_eq!(resumed["sfs"], sfs["sfs"]);
}

#[test]
fn single_round_without_pruning_keeps_catalog() {
    let t = tempfile::tempdir().unwrap();
    let out = ok(t.path(), &["--backend", "mock:profile", "sfs-search", "--max-n", "1", "--out", "s"]);
    assert!(out.contains("sfs (36)"), "{out}");
}

#[test]
fn strength_and_judge_bench_write_tables() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["--backend", "mock:profile", "sfs-eval", "--trials", "1", "--out", "e"]);
    let s: serde_json::Value = serde_json::from_str(&read(t.path(), "e/strength.json")).unwrap();
    assert_eq!(s["scores"]["base"].as_f64(), Some(1.0));
    ok(t.path(), &["--backend", "mock:profile", "judge-bench", "--criterion", "features,environment", "--pairs", "40", "--out", "b"]);
    let b: serde_json::Value = serde_json::from_str(&read(t.path(), "b/bench.json")).unwrap();
    assert_eq!(b.as_array().unwrap().len(), 2);
    assert_eq!(b[0]["precision"].as_f64(), Some(1.0));
}

#[test]
fn report_compares_runs() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--clips", "2", "--frames", "8", "--ids", "3", "--out", "data"]);
    for mode in ["rice", "baseline"] {
        ok(
            t.path(),
            &["--backend", "mock:vision", "caption", "--dataset", "data/dataset.json", "--mode", mode, "--judge", "profile", "--out", mode],
        );
    }
    let table = ok(t.path(), &["report", "--runs", "rice", "baseline"]);
    assert_eq!(table.lines().count(), 3, "{table}");
    let csv = ok(t.path(), &["report", "--runs", "rice", "baseline", "--format", "csv", "--out", "rep"]);
    let rows = load_csv(&csv).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].label, "rice");
    assert_eq!(rows[0].pooled_similarity, 1.0);
    assert_eq!(read(t.path(), "rep/report.csv"), csv);

    let o = idtrace(t.path(), &["report", "--runs", "data"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--clips", "1", "--frames", "9", "--ids", "2", "--out", "data"]);
    std::fs::write(
        t.path().join("run.toml"),
        "execution = \"sequential\"\n[gateway]\nbackend = \"mock:vision\"\n[pipeline]\nmode = \"mtdc\"\njudge = \"exact\"\nwindow_len = 3\n",
    )
    .unwrap();
    ok(t.path(), &["--config", "run.toml", "caption", "--dataset", "data/dataset.json", "--window", "5", "--out", "c"]);
    let m = RunManifest::load(&t.path().join("c/run.json")).unwrap();
    assert_eq!(m.config.pipeline.window_len, 5);
    assert_eq!(m.config.pipeline.mode.as_str(), "mtdc");
    assert_eq!(m.config.gateway.model, "mock-vision");
    assert_eq!(m.label.as_deref(), Some("mtdc"));
}
