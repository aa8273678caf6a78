use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn viccount(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viccount"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn single_line_error(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn simulate_count_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = viccount(
        &[
            "--seed",
            "5",
            "simulate",
            "--identities",
            "15",
            "--frames",
            "10",
            "--max-base-sim",
            "0.3",
            "--out",
            "s.jsonl",
        ],
        d,
    );
    assert!(sim.status.success());
    let count = viccount(&["count", "--in", "s.jsonl", "--report", "s.json"], d);
    assert!(count.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("s.json")).unwrap()).unwrap();
    assert_eq!(report["video_id"], "s");
    assert_eq!(report["length"], 10);
    assert_eq!(report["total"], report["gt_count"]);
    assert_eq!(report["per_step"].as_array().unwrap().len(), 10);

    let eval = viccount(&["eval", "s.json"], d);
    assert!(eval.status.success());
    let table = stdout(&eval);
    assert!(table.contains("MAE   0.0000"), "{table}");
    assert!(table.contains("WRAE  0.0000%"), "{table}");
}

#[test]
fn eval_reproduces_weighted_relative_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let report = |id: &str, length: u64, total: u64| {
        format!("{{\"video_id\":\"{id}\",\"length\":{length},\"total\":{total},\"per_step\":[]}}")
    };
    fs::write(d.join("a.json"), report("a", 10, 90)).unwrap();
    fs::write(d.join("b.json"), report("b", 30, 210)).unwrap();
    fs::write(d.join("gt.json"), "{\"a\":100,\"b\":200}").unwrap();
    let out = viccount(&["eval", "a.json", "b.json", "--gt", "gt.json"], d);
    assert!(out.status.success());
    let table = stdout(&out);
    assert!(table.contains("MAE   10.0000"), "{table}");
    assert!(table.contains("MSE   10.0000"), "{table}");
    assert!(table.contains("WRAE  6.2500%"), "{table}");

    single_line_error(&viccount(&["eval", "a.json"], d), 2);
}

#[test]
fn loss_and_pseudo_emit_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(viccount(
        &[
            "simulate",
            "--identities",
            "6",
            "--frames",
            "4",
            "--dim",
            "8",
            "--out",
            "s.jsonl"
        ],
        d
    )
    .status
    .success());

    let loss = stdout(&viccount(
        &[
            "loss",
            "--in",
            "s.jsonl",
            "--gamma-scale",
            "5",
            "--theta",
            "0.2",
        ],
        d,
    ));
    let lines: Vec<serde_json::Value> = loss
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    let sum: f64 = lines[..3]
        .iter()
        .map(|l| l["total"].as_f64().unwrap())
        .sum();
    assert!((sum - lines[3]["gml"].as_f64().unwrap()).abs() < 1e-12);

    let pseudo = stdout(&viccount(&["pseudo", "--in", "s.jsonl"], d));
    assert_eq!(pseudo.lines().count(), 3);
    let trajectories = stdout(&viccount(
        &["pseudo", "--in", "s.jsonl", "--trajectories"],
        d,
    ));
    assert!(trajectories
        .lines()
        .all(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["points"].is_array()));
}

#[test]
fn gradcheck_reports_and_fails_on_tight_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let ok = viccount(&["gradcheck", "--cases", "5"], dir.path());
    assert!(ok.status.success());
    assert!(stdout(&ok).starts_with("cases 5\nmax_relative_error "));
    single_line_error(
        &viccount(
            &["gradcheck", "--cases", "5", "--tolerance", "0"],
            dir.path(),
        ),
        3,
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    single_line_error(&viccount(&["count"], d), 1);
    single_line_error(&viccount(&["frobnicate"], d), 1);
    single_line_error(&viccount(&["simulate", "--frames", "0"], d), 1);
    single_line_error(&viccount(&["count", "--in", "missing.jsonl"], d), 2);

    fs::write(
        d.join("bad.jsonl"),
        "{\"schema\":1,\"dim\":2,\"delta\":3.0}\n{\"frame\":1,",
    )
    .unwrap();
    let bad = viccount(&["count", "--in", "bad.jsonl"], d);
    single_line_error(&bad, 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 2"));

    fs::write(
        d.join("labels.jsonl"),
        "{\"schema\":1,\"dim\":2,\"delta\":1.0}\n\
         {\"frame\":1,\"t\":0.0,\"det\":[{\"x\":0.0,\"y\":0.0,\"f\":[1.0,0.0]}],\"in\":[1],\"out\":[0]}\n\
         {\"frame\":2,\"t\":1.0,\"det\":[{\"x\":0.0,\"y\":0.0,\"f\":[1.0,0.0]}],\"in\":[1],\"out\":[1]}\n",
    )
    .unwrap();
    let inconsistent = viccount(&["loss", "--in", "labels.jsonl"], d);
    single_line_error(&inconsistent, 2);
    assert!(String::from_utf8_lossy(&inconsistent.stderr).contains("inconsistent weak labels"));

    assert_eq!(viccount(&["--help"], d).status.code(), Some(0));
    assert_eq!(viccount(&["--version"], d).status.code(), Some(0));
}

#[test]
fn seed_changes_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let a = viccount(
        &[
            "--seed",
            "1",
            "simulate",
            "--identities",
            "3",
            "--frames",
            "2",
        ],
        dir.path(),
    );
    let b = viccount(
        &[
            "--seed",
            "2",
            "simulate",
            "--identities",
            "3",
            "--frames",
            "2",
        ],
        dir.path(),
    );
    assert_ne!(a.stdout, b.stdout);
    let again = viccount(
        &[
            "simulate",
            "--identities",
            "3",
            "--frames",
            "2",
            "--seed",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(a.stdout, again.stdout);
}
