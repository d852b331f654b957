use hetnet::control::{receding_horizon_control, ControllerConfig};
use hetnet::milp::{
    build_milp, parse_lp, parse_mps, write_lp, write_mps, BuildOptions, LinExpr, MilpModel,
    Symbol, VarKind, VariableAtlas,
};
use hetnet::milp::atlas::Names;
use hetnet::scenario::serialize_scenario;
use hetnet::sim::{audit_conservation, audit_fcfs};
use hetnet::study::{run_study, DemandLevel, SignalControl, Signalization, StudyGrid};
use hetnet::{parse_scenario, run_scenario, total_delay, NetworkModel, ScenarioConfig, SignalPlan, Simulator};
use proptest::prelude::*;
use serde_json::{json, Value};

fn base(name: &str) -> Value {
    let path = format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A shipped topology with its demand replaced.
fn with_demand(name: &str, entries: &[&str], fine: bool, demand: &[(usize, usize, u32)]) -> (NetworkModel, ScenarioConfig) {
    let mut doc = base(name);
    let rows: Vec<Value> = demand
        .iter()
        .map(|&(e, t, c)| {
            let link = entries[e % entries.len()];
            if fine {
                json!({"link": link, "fine_step": t, "count": c})
            } else {
                json!({"link": link, "interval": t, "count": c})
            }
        })
        .collect();
    doc["demand"] = json!(rows);
    parse_scenario(&doc.to_string()).unwrap()
}

fn demand(max_t: usize) -> impl Strategy<Value = Vec<(usize, usize, u32)>> {
    prop::collection::vec((0usize..4, 0..max_t, 1u32..12), 0..14)
}

fn plan_for(net: &NetworkModel, bits: &[usize], n: usize) -> SignalPlan {
    SignalPlan::new(
        net.signalized
            .iter()
            .enumerate()
            .map(|(j, x)| (0..n).map(|k| bits[(j * n + k) % bits.len()] % x.stages.len()).collect())
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn corridor_runs_conserve_and_repeat(d in demand(8), bits in prop::collection::vec(0usize..2, 1..9)) {
        let (net, sc) = with_demand("corridor_mixed.json", &["a", "b", "c"], false, &d);
        let plan = plan_for(&net, &bits, sc.horizon);
        let a = run_scenario(&net, &sc, &plan).unwrap();
        prop_assert!(audit_conservation(&net, &a).is_empty());
        prop_assert!(audit_fcfs(&net, &a).is_empty());
        prop_assert_eq!(&a, &run_scenario(&net, &sc, &plan).unwrap());
        let held: u64 = a.final_state.volumes.iter().map(|&v| v as u64).sum::<u64>() + a.final_state.queues.iter().sum::<u64>();
        let initial: u64 = a.records[0].volumes.iter().map(|&v| v as u64).sum();
        prop_assert_eq!(initial + sc.total_demand(), held + a.exited_total);
    }

    #[test]
    fn four_way_runs_conserve(d in demand(24)) {
        let (net, sc) = with_demand("awsc_four_way.json", &["E", "S", "W", "N"], true, &d);
        let a = run_scenario(&net, &sc, &SignalPlan::new(Vec::new())).unwrap();
        prop_assert!(audit_conservation(&net, &a).is_empty());
        prop_assert!(audit_fcfs(&net, &a).is_empty());
        for r in &a.records {
            for (i, l) in net.links.iter().enumerate() {
                prop_assert!(r.volumes[i] <= l.capacity);
            }
        }
    }

    #[test]
    fn scenario_files_round_trip(d in demand(8)) {
        let (net, sc) = with_demand("corridor_mixed.json", &["a", "b", "c"], false, &d);
        let (net2, sc2) = parse_scenario(&serialize_scenario(&net, &sc)).unwrap();
        prop_assert_eq!(net, net2);
        prop_assert_eq!(sc, sc2);
    }

    #[test]
    fn exported_models_reparse_with_the_same_shape(d in demand(4), n in 1usize..4) {
        let (net, sc) = with_demand("single_intersection.json", &["a", "b"], false, &d);
        let s0 = Simulator::new(&net, &sc).unwrap().initial_state();
        let m = build_milp(&net, &sc, &s0, &SignalPlan::new(vec![vec![]]), n, &BuildOptions::default()).unwrap().model;
        for back in [parse_lp(&write_lp(&m).unwrap()).unwrap(), parse_mps(&write_mps(&m).unwrap()).unwrap()] {
            prop_assert_eq!(back.constraints.len(), m.constraints.len());
            prop_assert_eq!(back.variables.len(), m.variables.len());
            prop_assert_eq!(&back.objective, &m.objective);
        }
    }

    #[test]
    fn product_rows_are_exact_for_any_bounds(lo in -6i32..5, span in 0i32..8) {
        let hi = lo + span;
        let mut m = MilpModel::new("p");
        let mut atlas = VariableAtlas::default();
        let b = m.add_var("b", VarKind::Binary, 0.0, 1.0);
        atlas.insert(Symbol::Occupied { node: 0, group: 0, t: 1 }, b).unwrap();
        let y = m.add_var("y", VarKind::Integer, lo as f64, hi as f64);
        atlas.insert(Symbol::Arrival { node: 0, group: 0, t: 0 }, y).unwrap();
        let (l, s, ns, nn, st) = (vec![], vec![], vec![], vec!["N".to_string()], vec![]);
        let names = Names { links: &l, streams: &s, nodes_sig: &ns, nodes_non: &nn, stages: &st };
        let sym = Symbol::ProdArrival { node: 0, group: 0, t: 1 };
        let z = hetnet::milp::build::linearize_product(&mut m, &mut atlas, sym, &names, b, &LinExpr::var(y), (lo as f64, hi as f64)).unwrap();
        for bv in [0, 1] {
            for yv in lo..=hi {
                for zv in lo.min(0) - 1..=hi.max(0) + 1 {
                    let mut x = vec![0.0; 3];
                    x[b] = bv as f64;
                    x[y] = yv as f64;
                    x[z] = zv as f64;
                    prop_assert_eq!(m.violations(&x, 1e-9).is_empty(), zv == bv * yv, "b={} y={} z={}", bv, yv, zv);
                }
            }
        }
    }

    #[test]
    fn delay_bracket_is_nonnegative_under_the_speed_bound(c in 0u32..40, s in 0u32..40, len in 10.0f64..400.0, v in 1.0f64..30.0, delta in prop::sample::select(vec![5.0, 10.0, 15.0])) {
        // Only pairs where s ≤ C·v·Δ/L.
        prop_assume!((s as f64) <= c as f64 * v * delta / len);
        prop_assert!(delta * c as f64 - len / v * s as f64 >= -1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Single shot: one window over the whole horizon, committed at once.
    /// Weak relaxations can exhaust the node limit; the plan is then only
    /// held to the cycle.
    #[test]
    fn single_shot_control_never_loses_to_the_cycle(d in demand(4)) {
        let (net, sc) = with_demand("single_intersection.json", &["a", "b"], false, &d);
        let mut cfg = ControllerConfig::new(sc.horizon);
        cfg.reoptimize_every = sc.horizon;
        let out = receding_horizon_control(&net, &sc, &cfg).unwrap();
        out.plan.check(&net, sc.horizon).unwrap();
        let got = total_delay(&out.trajectory, &net, sc.delta_s).total;
        let cyclic = run_scenario(&net, &sc, &cfg.cyclic_plan(&net, sc.horizon)).unwrap();
        prop_assert!(got <= total_delay(&cyclic, &net, sc.delta_s).total);
        // A proven epoch must match enumeration over every stage sequence.
        if out.limited_epochs() == 0 {
            let stages = net.signalized[0].stages.len();
            let best = (0..stages.pow(sc.horizon as u32))
                .map(|code| {
                    let seq = (0..sc.horizon).map(|k| code / stages.pow(k as u32) % stages).collect();
                    total_delay(&run_scenario(&net, &sc, &SignalPlan::new(vec![seq])).unwrap(), &net, sc.delta_s).total
                })
                .fold(f64::INFINITY, f64::min);
            prop_assert_eq!(got, best);
        }
    }
}

#[test]
fn studies_reproduce_bit_for_bit() {
    let grids = [StudyGrid::new(Signalization::All, DemandLevel::Medium), StudyGrid::new(Signalization::None, DemandLevel::High)];
    let a = run_study(&grids, &[3, 4], &SignalControl::Cyclic).unwrap();
    let b = run_study(&grids, &[3, 4], &SignalControl::Cyclic).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![3, 4, 3, 4]);
}
