use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use affectpipe::pipeline::exit;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_affectpipe"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_cohort() -> Value {
    json!({
        "n_participants": 4,
        "n_eligible": 2,
        "days": 150,
        "eligible_report_days": [120, 140],
        "ineligible_report_days": [20, 40],
    })
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn single_stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cohort.json"), small_cohort().to_string()).unwrap();

    ok(&run(&["synth", "--config", "cohort.json", "--out-dir", "cohort", "--seed", "4"], d));
    assert!(d.join("cohort/ground_truth.json").is_file());
    assert!(d.join("cohort/p01/affect.csv").is_file());

    ok(&run(
        &[
            "ingest", "--input-dir", "cohort", "--schema", "cohort/schema.json", "--items",
            "cohort/affect_items.json", "--out", "timelines.json",
        ],
        d,
    ));
    ok(&run(&["impute", "--in", "timelines.json", "--out", "imputed.json"], d));
    ok(&run(
        &["label", "--in", "imputed.json", "--target", "pa", "--out", "labels.json", "--threshold", "100"],
        d,
    ));
    let labels = read_json(&d.join("labels.json"));
    assert_eq!(labels["participants"].as_array().unwrap().len(), 2);
    assert_eq!(labels["lag"], "next-day");

    ok(&run(&["dataset", "--timelines", "imputed.json", "--labels", "labels.json", "--out", "dataset.json"], d));
    ok(&run(
        &[
            "evaluate", "--data", "dataset.json", "--model", "rf,baseline", "--folds", "5", "--seed", "3", "--out",
            "report.json", "--roc-csv", "roc.csv", "--accuracy-csv", "acc.csv",
        ],
        d,
    ));
    let report = read_json(&d.join("report.json"));
    assert_eq!(report.as_array().unwrap().len(), 2);
    assert_eq!(report[0]["family"], "rf");
    let acc = std::fs::read_to_string(d.join("acc.csv")).unwrap();
    assert!(acc.lines().any(|l| l.starts_with("macro,rf,")));
    assert!(std::fs::read_to_string(d.join("roc.csv")).unwrap().starts_with("family,participant_id,fpr,tpr"));

    ok(&run(&["train", "--data", "dataset.json", "--model", "knn", "--out-dir", "models"], d));
    assert_eq!(std::fs::read_dir(d.join("models")).unwrap().count(), 2);

    ok(&run(&["analyze", "corr", "--timelines", "imputed.json", "--out", "corr.json", "--csv", "corr.csv"], d));
    assert!(std::fs::read_to_string(d.join("corr.csv")).unwrap().starts_with("feature,pa,na"));
    ok(&run(
        &[
            "analyze", "tvalues", "--timelines", "imputed.json", "--models-dir", "models", "--out", "t.json", "--csv",
            "t.csv",
        ],
        d,
    ));
    assert!(read_json(&d.join("t.json"))["pooled"].as_array().is_some());
}

#[test]
fn missing_input_and_bad_arguments_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["impute", "--in", "nope.json", "--out", "x.json"], dir.path());
    assert_eq!(out.status.code(), Some(exit::MISSING_INPUT as i32));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let out = run(&["evaluate", "--data", "d.json", "--model", "forest", "--out", "r.json"], dir.path());
    assert_ne!(out.status.code(), Some(0));

    let out = run(&["label", "--in", "x.json", "--target", "joy", "--out", "l.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let write = |name: &str, v: Value| std::fs::write(d.join(name), v.to_string()).unwrap();

    write("unknown.json", json!({"output_dir": "out", "stages": ["synth", "train"]}));
    assert_eq!(run(&["run", "--config", "unknown.json"], d).status.code(), Some(exit::UNKNOWN_STAGE as i32));

    write("typo.json", json!({"output_dir": "out", "sed": 1}));
    assert_eq!(run(&["run", "--config", "typo.json"], d).status.code(), Some(exit::CONFIG as i32));

    assert_eq!(run(&["run", "--config", "absent.json"], d).status.code(), Some(exit::MISSING_INPUT as i32));

    write(
        "missing.json",
        json!({"output_dir": "out", "stages": ["ingest", "impute"],
               "inputs": {"cohort_dir": "cohort", "schema": "no-such-schema.json"}}),
    );
    std::fs::create_dir(d.join("cohort")).unwrap();
    let out = run(&["run", "--config", "missing.json"], d);
    assert_eq!(out.status.code(), Some(exit::MISSING_INPUT as i32));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-schema.json"));
    assert!(!d.join("out").exists());
    let leftovers: Vec<_> = std::fs::read_dir(d)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains("partial"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn schema_mismatch_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = d.join("cohort/p01");
    std::fs::create_dir_all(&p).unwrap();
    std::fs::write(p.join("ring.csv"), "date,feature_id,value,duration_min\n2020-01-01,not_a_feature,1,1440\n").unwrap();
    std::fs::write(p.join("affect.csv"), "date,item_id,rating\n").unwrap();
    std::fs::write(
        d.join("cfg.json"),
        json!({"output_dir": "out", "stages": ["ingest"], "inputs": {"cohort_dir": "cohort"}}).to_string(),
    )
    .unwrap();
    let out = run(&["run", "--config", "cfg.json"], d);
    assert_eq!(out.status.code(), Some(exit::SCHEMA as i32));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `ingest`") && err.contains("not_a_feature"), "{err}");
    assert!(!d.join("out").exists());
}

#[test]
fn run_writes_every_report_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = json!({
        "seed": 9,
        "output_dir": "out",
        "synth": small_cohort(),
        "label": {"eligibility_threshold": 100},
        "evaluate": {"models": [{"family": "knn", "k": 5}, {"family": "baseline"}]},
        "analyze": {"model": {"family": "knn", "k": 5}},
    });
    std::fs::write(d.join("cfg.json"), cfg.to_string()).unwrap();
    ok(&run(&["run", "--config", "cfg.json"], d));
    for f in [
        "timelines.json", "timelines_imputed.json", "labels.json", "eligibility.json", "dataset.json",
        "evaluation.json", "accuracy.csv", "roc.csv", "ablation.json", "ablation.csv", "correlations.json",
        "correlations.csv", "tvalues.json", "tvalues.csv", "manifest.json", "cohort/ground_truth.json",
    ] {
        assert!(d.join("out").join(f).is_file(), "missing {f}");
    }
    let manifest = read_json(&d.join("out/manifest.json"));
    let eval = read_json(&d.join("out/evaluation.json"));
    assert_eq!(eval["run_id"], manifest["run_id"]);
    assert_eq!(manifest["seed"], 9);
    let first = manifest["outputs"].clone();

    // Rerun over the previous output, then with a different seed.
    ok(&run(&["run", "--config", "cfg.json"], d));
    assert_eq!(read_json(&d.join("out/manifest.json"))["outputs"], first);
    ok(&run(&["run", "--config", "cfg.json", "--seed", "10"], d));
    let other = read_json(&d.join("out/manifest.json"));
    assert_eq!(other["seed"], 10);
    assert_ne!(other["outputs"], first);
}

#[test]
fn run_refuses_to_replace_foreign_directories() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir(d.join("out")).unwrap();
    std::fs::write(d.join("out/notes.txt"), "keep me").unwrap();
    std::fs::write(d.join("cfg.json"), json!({"output_dir": "out", "stages": ["synth"]}).to_string()).unwrap();
    let out = run(&["run", "--config", "cfg.json"], d);
    assert_eq!(out.status.code(), Some(exit::CONFIG as i32));
    assert!(d.join("out/notes.txt").is_file());
}
