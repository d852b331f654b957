use hetnet::milp::{build_milp, parse_lp, parse_mps, solve_bnb, write_lp, write_mps, BuildOptions, MilpModel, SolveOptions};
use hetnet::{parse_scenario, SignalPlan, Simulator};
use std::path::PathBuf;

fn tiny() -> MilpModel {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/single_intersection.json")).unwrap();
    let (net, sc) = parse_scenario(&text).unwrap();
    let s0 = Simulator::new(&net, &sc).unwrap().initial_state();
    build_milp(&net, &sc, &s0, &SignalPlan::new(vec![vec![]]), 2, &BuildOptions::default()).unwrap().model
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against the stored file; `HETNET_BLESS=1` rewrites it instead.
fn check_golden(name: &str, fresh: &str) {
    let path = golden(name);
    if std::env::var_os("HETNET_BLESS").is_some() {
        std::fs::write(&path, fresh).unwrap();
        return;
    }
    let stored = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(stored, fresh, "{name} drifted; rerun with HETNET_BLESS=1 after checking the diff");
}

fn shape(m: &MilpModel) -> (usize, usize, usize) {
    let finite = m.variables.iter().filter(|v| v.lower.is_finite() || v.upper.is_finite()).count();
    (m.constraints.len(), m.variables.len(), finite)
}

#[test]
fn lp_matches_golden_and_round_trips() {
    let m = tiny();
    let text = write_lp(&m).unwrap();
    check_golden("single_n2.lp", &text);
    let back = parse_lp(&text).unwrap();
    assert_eq!(shape(&back), shape(&m));
    assert_eq!(write_lp(&back).unwrap(), text);
}

#[test]
fn mps_matches_golden_and_round_trips() {
    let m = tiny();
    let text = write_mps(&m).unwrap();
    check_golden("single_n2.mps", &text);
    let back = parse_mps(&text).unwrap();
    assert_eq!(shape(&back), shape(&m));
    assert_eq!(write_mps(&back).unwrap(), text);
}

#[test]
fn reparsed_models_solve_to_the_same_optimum() {
    let m = tiny();
    let z = solve_bnb(&m, &SolveOptions::default()).unwrap().objective;
    for back in [parse_lp(&write_lp(&m).unwrap()).unwrap(), parse_mps(&write_mps(&m).unwrap()).unwrap()] {
        assert_eq!(solve_bnb(&back, &SolveOptions::default()).unwrap().objective, z);
    }
}

