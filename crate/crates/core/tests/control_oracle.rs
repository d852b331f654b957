use hetnet::milp::{build_milp, solve_bnb, BuildOptions, SolveOptions, SolveStatus};
use hetnet::{parse_scenario, total_delay, SignalPlan, Simulator};

fn instance() -> (hetnet::NetworkModel, hetnet::ScenarioConfig) {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/single_intersection.json")).unwrap();
    parse_scenario(&text).unwrap()
}

#[test]
fn optimum_matches_brute_force_over_stage_sequences() {
    let (net, sc) = instance();
    let sim = Simulator::new(&net, &sc).unwrap();
    let n = 4;
    let mut best = f64::INFINITY;
    for mask in 0..1u32 << n {
        let seq: Vec<usize> = (0..n).map(|k| (mask >> k & 1) as usize).collect();
        let traj = sim.run(&SignalPlan::new(vec![seq]), n).unwrap();
        best = best.min(total_delay(&traj, &net, sc.delta_s).total);
    }
    let s0 = sim.initial_state();
    let b = build_milp(&net, &sc, &s0, &SignalPlan::new(vec![vec![]]), n, &BuildOptions::default()).unwrap();
    let sol = solve_bnb(&b.model, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    eprintln!("milp {} brute {} nodes {}", sol.objective, best, sol.nodes);
    assert_eq!(sol.objective, best);
}
