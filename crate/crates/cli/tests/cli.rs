use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hetnet"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_trajectory_summary_and_plan() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--scenario", s(&scenario("corridor_mixed.json")), "-o", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("interval,link,volume,inflow,outflow,delay_s\n"));
    assert_eq!(csv.lines().count(), 1 + 8 * 8);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    for key in ["total_delay_s", "average_delay_s", "max_queue", "total_vehicles"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
    assert_eq!(std::fs::read_to_string(dir.path().join("delay_series.csv")).unwrap().lines().count(), 9);
}

#[test]
fn control_plan_replays_to_the_same_summary() {
    let dir = tempfile::tempdir().unwrap();
    let ctl = dir.path().join("ctl");
    let o = run(&["control", "--scenario", s(&scenario("single_intersection.json")), "--window", "2", "-o", s(&ctl)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let replay = dir.path().join("replay");
    let plan = ctl.join("plan.json");
    let o = run(&["simulate", "--scenario", s(&scenario("single_intersection.json")), "--plan", s(&plan), "-o", s(&replay)]);
    assert_eq!(code(&o), 0);
    let a = std::fs::read_to_string(ctl.join("summary.json")).unwrap();
    let b = std::fs::read_to_string(replay.join("summary.json")).unwrap();
    assert_eq!(a, b);
    let epochs: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(ctl.join("epochs.json")).unwrap()).unwrap();
    assert_eq!(epochs.len(), 4);
}

#[test]
fn validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(scenario("single_intersection.json")).unwrap();
    std::fs::write(&bad, text.replacen('{', "{\"colour\": 1,", 1)).unwrap();
    let o = run(&["simulate", "--scenario", s(&bad), "-o", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let o = run(&["simulate", "--scenario", s(&scenario("single_intersection.json")), "--delta", "7", "-o", s(dir.path())]);
    assert_eq!(code(&o), 2);

    let plan = dir.path().join("plan.json");
    std::fs::write(&plan, r#"{"stages": {"J": ["A", "nope", "A", "A"]}}"#).unwrap();
    let o = run(&["simulate", "--scenario", s(&scenario("single_intersection.json")), "--plan", s(&plan), "-o", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn solver_limits_exit_3_but_still_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "control", "--scenario", s(&scenario("corridor_mixed.json")), "--window", "3", "--node-limit", "0", "-o", s(dir.path()),
    ]);
    assert_eq!(code(&o), 3);
    assert!(dir.path().join("plan.json").exists());

    let o = run(&[
        "export-milp", "--scenario", s(&scenario("corridor_mixed.json")), "--solve", "--node-limit", "0", "-o", s(dir.path()),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn export_milp_writes_models_and_solution() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["export-milp", "--scenario", s(&scenario("single_intersection.json")), "--window", "4", "--solve", "-o", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(dir.path().join("model.lp")).unwrap().contains("Subject To"));
    assert!(std::fs::read_to_string(dir.path().join("model.mps")).unwrap().starts_with("NAME"));
    let sol: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["objective"], 260.0);
    assert_eq!(sol["status"], "optimal");
    assert!(sol["values"]["theta(J,A,0)"].is_number());
    assert!(sol["nodes"].is_number() && sol["wall_time"].is_number());
}

#[test]
fn verify_reports_a_clean_instance() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("report.json");
    let o = run(&["verify", "--scenario", s(&scenario("single_intersection.json")), "--window", "3", "--report", s(&rep)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(rep).unwrap()).unwrap();
    assert_eq!(v["plans_checked"], 8);
    assert_eq!(v["divergences"].as_array().unwrap().len(), 0);
}

#[test]
fn cyclic_study_writes_table_bars_and_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["study", "--levels", "low", "--signalization", "none,all", "--policy", "cyclic", "--seeds", "2", "-o", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4);
    let heat = std::fs::read_to_string(dir.path().join("heatmaps/low-all_s1.csv")).unwrap();
    assert_eq!(heat.lines().count(), 1 + 16);
    assert!(std::fs::read_to_string(dir.path().join("bars.csv")).unwrap().contains("low-none,2,"));
}
