//! End-to-end runs of the `hyplan` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hyplan(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyplan"))
        .args(args)
        .current_dir(dir)
        .env_remove("HYPLAN_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn scene_count(path: &Path) -> usize {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["scenes"].as_array().unwrap().len()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_writes_the_full_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let o = hyplan(&["gen", "--out", "s.json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(scene_count(&dir.path().join("s.json")), 567);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hyplan(&["gen", "--out", "s.json", "--frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_method_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(hyplan(&["gen", "--out", "s.json", "--grid", "templates=1;speeds=1.0;dists=10"], dir.path()).status.success());
    let o = hyplan(&["eval", "--scenes", "s.json", "--method", "astar-only"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown method"), "{}", stderr(&o));
}

#[test]
fn eval_without_model_reports_missing_model() {
    let dir = tempfile::tempdir().unwrap();
    assert!(hyplan(&["gen", "--out", "s.json"], dir.path()).status.success());
    for m in ["hyplan", "navppo-only"] {
        let o = hyplan(&["eval", "--scenes", "s.json", "--method", m], dir.path());
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains("MissingModel"), "{}", stderr(&o));
    }
    let o = hyplan(&["plan", "--scenes", "s.json", "--method", "hyplan", "--out", "l.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("MissingModel"));
}

#[test]
fn seed_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_hyplan"));
        c.args(args).current_dir(dir.path()).env_remove("HYPLAN_SEED");
        if let Some(s) = env {
            c.env("HYPLAN_SEED", s);
        }
        assert!(c.output().unwrap().status.success());
    };
    let grid = "templates=1,2;speeds=0.5;dists=10,20";
    run(&["gen", "--out", "a.json", "--grid", grid, "--seed", "3"], None);
    run(&["gen", "--out", "b.json", "--grid", grid], Some("3"));
    run(&["gen", "--out", "c.json", "--grid", grid, "--seed", "3"], Some("9"));
    run(&["gen", "--out", "d.json", "--grid", grid], Some("9"));
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.json"), read("b.json"));
    assert_eq!(read("a.json"), read("c.json"));
    assert_ne!(read("a.json"), read("d.json"));
}

#[test]
fn eval_report_and_plan_agree() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("short.cfg"), "tMax = 6\n").unwrap();
    assert!(hyplan(&["gen", "--out", "s.json", "--grid", "templates=1,3;speeds=1.0;dists=20"], p).status.success());
    let o = hyplan(
        &["--config", "short.cfg", "eval", "--scenes", "s.json", "--split", "all", "--method", "despot-ltr", "--out", "m.csv", "--trace", "l.jsonl"],
        p,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(p.join("m.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("method,SI90,crashPct,nearMissPct,timeoutPct,TTG,"));
    assert!(lines[1].starts_with("despot-ltr,"));

    let o = hyplan(&["report", "l.jsonl", "--out", "r.csv"], p);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(p.join("r.csv")).unwrap(), csv);

    let o = hyplan(&["--config", "short.cfg", "plan", "--scenes", "s.json", "--method", "despot-ltr", "--out", "one.jsonl", "--trace", "t.json"], p);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let one = fs::read_to_string(p.join("one.jsonl")).unwrap();
    let steps = one.lines().filter(|l| l.contains("\"record\":\"step\"")).count();
    assert!((1..=6).contains(&steps));
    let traces: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("t.json")).unwrap()).unwrap();
    assert!(traces.as_array().is_some_and(|a| !a.is_empty()));
}
