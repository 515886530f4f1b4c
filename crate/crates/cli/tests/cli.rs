use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "synth.records_per_cohort=20",
    "--set",
    "k_nn=5",
    "--set",
    "proj_k=16",
];

const STAGES: &[&str] = &[
    "augment",
    "cooccur",
    "project",
    "concept-dist",
    "record-dist",
    "knn-graph",
    "embed",
    "eval-ndcg",
    "eval-cluster",
    "eval-auc",
];

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdmanifold"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("MDMANIFOLD_OUT")
        .output()
        .expect("binary runs")
}

fn run_ok(out: &Path, args: &[&str]) -> Output {
    let o = run(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn full_pipeline(out: &Path, extra: &[&str]) {
    let mut args = vec!["synth"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    run_ok(out, &args);
    for stage in STAGES {
        let mut args = vec![*stage];
        args.extend_from_slice(SMALL);
        args.extend_from_slice(extra);
        run_ok(out, &args);
    }
}

#[test]
fn demo_prints_tables_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_ok(dir.path(), &["demo-figure3"]);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("SD_1(V1,V2) = 0.0153"), "{stdout}");
    assert!(stdout.contains("0.4250"));
    assert!(dir.path().join("demo-figure3.manifest.json").exists());
}

#[test]
fn synth_then_pipeline_gives_full_embedding() {
    let dir = tempfile::tempdir().unwrap();
    full_pipeline(dir.path(), &["--set", "dim=3"]);
    let text = std::fs::read_to_string(dir.path().join("embedding.tsv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id\ty1\ty2\ty3");
    assert_eq!(lines.len(), 1 + 60);
    assert!(lines[1..].iter().all(|l| l.split('\t').count() == 4));
    for stage in STAGES {
        let m = dir.path().join(format!("{stage}.manifest.json"));
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&m).unwrap()).unwrap();
        assert_eq!(v["stage"], *stage);
        assert!(v["outputs"][0]["sha256"].as_str().unwrap().len() == 64);
    }
}

#[test]
fn embed_without_graph_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["embed"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("knn-graph"), "{err}");
}

#[test]
fn config_errors_are_usage_errors_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "dim = 2\nk_nn = many\n").unwrap();
    let o = run(dir.path(), &["synth", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("run.cfg:2") && err.contains("k_nn"), "{err}");

    let o = run(dir.path(), &["synth", "--set", "nonsense=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "synth.records_per_cohort = 50\n").unwrap();
    run_ok(
        dir.path(),
        &["synth", "--config", cfg.to_str().unwrap(), "--set", "synth.records_per_cohort=4"],
    );
    let text = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn malformed_records_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), &["synth"]);
    std::fs::write(dir.path().join("records.jsonl"), "{\"id\": \"r1\", \"codes\": [\"C000\"]}\nnot json\n").unwrap();
    let o = run(dir.path(), &["augment"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2"));
}

#[test]
fn json_metrics_format() {
    let dir = tempfile::tempdir().unwrap();
    full_pipeline(dir.path(), &[]);
    let o = run_ok(dir.path(), &["eval-cluster", "--format", "json"]);
    let lines: Vec<serde_json::Value> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["metric"], "silhouette");
    assert!(lines[1]["value"].as_f64().unwrap() > 1.0);
    assert_eq!(lines[1]["params"]["clusters"], 3);
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".manifest.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    full_pipeline(a.path(), &["--threads", "1"]);
    full_pipeline(b.path(), &["--threads", "4"]);
    let (xa, xb) = (artifacts(a.path()), artifacts(b.path()));
    assert_eq!(xa.len(), xb.len());
    for ((na, da), (nb, db)) in xa.iter().zip(&xb) {
        assert_eq!(na, nb);
        assert!(da == db, "{na} differs between thread counts");
    }
}
