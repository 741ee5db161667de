//! End-to-end exercise of the command-line surface against a small
//! synthetic city.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trajprism"))
}

fn run_ok(args: &[&str]) -> String {
    let output = bin().args(args).output().expect("binary runs");
    assert!(
        output.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

#[test]
fn cli_pipeline_runs_every_verb() {
    let dir = tempfile::tempdir().unwrap();
    let city = dir.path().join("city");

    let stats = run_ok(&["synth-city", "--out", &p(&city), "--grid", "4", "--n-traj", "24"]);
    assert!(stats.contains("\"n_trajectories\": 24"));

    run_ok(&["ingest", "--city", &p(&city)]);

    let phases = dir.path().join("phases.jsonl");
    run_ok(&["compress", "--city", &p(&city), "--out", &p(&phases)]);
    let text = std::fs::read_to_string(&phases).unwrap();
    assert!(text.lines().next().unwrap().contains("trajprism.phases"));
    assert!(text.lines().nth(1).unwrap().contains("\"road_names\""));

    let intents = dir.path().join("intents.jsonl");
    run_ok(&["sample-intents", "--city", &p(&city), "--out", &p(&intents)]);

    let ann = dir.path().join("ann.jsonl");
    run_ok(&["annotate", "--city", &p(&city), "--out", &p(&ann)]);
    let text = std::fs::read_to_string(&ann).unwrap();
    assert!(text.contains("\"_intent_planning\""));

    let clean = dir.path().join("clean.jsonl");
    let qc = dir.path().join("qc.jsonl");
    run_ok(&[
        "qc", "--city", &p(&city), "--annotations", &p(&ann), "--out", &p(&clean), "--report",
        &p(&qc),
    ]);

    let scores = dir.path().join("scores.jsonl");
    let selected = dir.path().join("top.json");
    run_ok(&[
        "judge", "--city", &p(&city), "--annotations", &p(&clean), "--out", &p(&scores), "--top",
        "5", "--selected", &p(&selected),
    ]);
    let ids: Vec<u64> =
        serde_json::from_str(&std::fs::read_to_string(&selected).unwrap()).unwrap();
    assert_eq!(ids.len(), 5);

    let split = dir.path().join("split.json");
    run_ok(&["split", "--city", &p(&city), "--out", &p(&split)]);
    let sp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&split).unwrap()).unwrap();
    assert_eq!(sp["train"].as_array().unwrap().len(), 16);

    let preds = dir.path().join("preds.jsonl");
    run_ok(&[
        "anchor-run", "--city", &p(&city), "--mode", "destsp-embed", "--out", &p(&preds),
    ]);
    // The emitted predictions feed straight into eval.
    let out_preds = dir.path().join("out_preds");
    let report = run_ok(&[
        "eval", "--city", &p(&city), "--task", "1", "--method", "destsp-embed", "--input",
        &p(&preds), "--out", &p(&out_preds),
    ]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v["report"]["jaccard"].is_number());

    let fuse_params = dir.path().join("fuse.json");
    let fuse_db = dir.path().join("fused.jsonl");
    run_ok(&[
        "fuse-train", "--city", &p(&city), "--params", &p(&fuse_params), "--db", &p(&fuse_db),
        "--epochs", "5",
    ]);
    let ranked = run_ok(&[
        "fuse-retrieve", "--db", &p(&fuse_db), "--query", "drives ending downtown", "--k", "3",
    ]);
    let ids: Vec<u64> = serde_json::from_str(&ranked).unwrap();
    assert_eq!(ids.len(), 3);

    let caps = dir.path().join("caps.jsonl");
    run_ok(&["rap-run", "--city", &p(&city), "--mode", "sem", "--out", &p(&caps)]);

    let out1 = dir.path().join("out1");
    let report = run_ok(&[
        "eval", "--city", &p(&city), "--task", "1", "--method", "echo", "--out", &p(&out1),
    ]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["report"]["dest_hit"], 1.0);

    let fig = dir.path().join("fig.csv");
    run_ok(&[
        "figure-data", "--report",
        &p(&out1.join("report_task1_echo.json")),
        "--out", &p(&fig),
    ]);
    assert!(std::fs::read_to_string(&fig).unwrap().starts_with("style,jaccard,n"));
}

#[test]
fn cli_eval_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let city = dir.path().join("city");
    run_ok(&["synth-city", "--out", &p(&city), "--grid", "4", "--n-traj", "20", "--seed", "3"]);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_ok(&["eval", "--city", &p(&city), "--task", "3", "--method", "sem", "--out", &p(&out_a)]);
    run_ok(&["eval", "--city", &p(&city), "--task", "3", "--method", "sem", "--out", &p(&out_b)]);
    let a = std::fs::read(out_a.join("report_task3_sem.json")).unwrap();
    let b = std::fs::read(out_b.join("report_task3_sem.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cli_rejects_unknown_method() {
    let dir = tempfile::tempdir().unwrap();
    let city = dir.path().join("city");
    run_ok(&["synth-city", "--out", &p(&city), "--grid", "3", "--n-traj", "10"]);
    let status = bin()
        .args(["eval", "--city", &p(&city), "--task", "1", "--method", "bogus", "--out", &p(&dir.path().join("x"))])
        .output()
        .unwrap();
    assert!(!status.status.success());
}
