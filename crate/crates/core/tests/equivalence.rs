use hetnet::milp::equivalence::{check_equivalence, check_fcfs_equivalence};
use hetnet::milp::BuildOptions;
use hetnet::scenario::{Demand, DemandTime};
use hetnet::{parse_scenario, Error};

fn single() -> (hetnet::NetworkModel, hetnet::ScenarioConfig) {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/single_intersection.json")).unwrap();
    parse_scenario(&text).unwrap()
}

const AWSC: &str = r#"{
    "links": [
        {"id": "A", "length_m": 50, "free_speed": 10},
        {"id": "B", "length_m": 50, "free_speed": 10},
        {"id": "x", "length_m": 100, "free_speed": 10},
        {"id": "y", "length_m": 100, "free_speed": 10}
    ],
    "nonsignalized": [{"id": "N", "approaches": [{"link": "A", "sigma": 1}, {"link": "B", "sigma": 2}],
                       "streams": [["A", "x"], ["B", "y"]]}],
    "delta_s": 15, "lambda_s": 5, "horizon": 2
}"#;

#[test]
fn every_stage_sequence_agrees() {
    let (net, sc) = single();
    let rep = check_equivalence(&net, &sc, 3, &BuildOptions::default()).unwrap();
    assert_eq!(rep.plans_checked, 8);
    assert!(rep.is_clean(), "{:#?}", rep.divergences);
}

#[test]
fn small_big_m_diverges() {
    let (net, sc) = single();
    let opts = BuildOptions { big_m: Some(1.0), unchecked_big_m: true, ..Default::default() };
    let rep = check_equivalence(&net, &sc, 3, &opts).unwrap();
    assert!(!rep.is_clean());
    assert!(rep.divergences.iter().any(|d| d.check == "simulated point feasible"));
}

#[test]
fn oversized_enumeration_is_refused() {
    let (net, sc) = single();
    assert!(matches!(check_equivalence(&net, &sc, 21, &BuildOptions::default()), Err(Error::TooLarge { .. })));
}

#[test]
fn awsc_indicators_and_greens_are_pinned() {
    let (net, sc) = parse_scenario(AWSC).unwrap();
    let (a, b) = (net.link_index("A").unwrap(), net.link_index("B").unwrap());
    let mut variants = Vec::new();
    for count in [2u32, 5] {
        for mask in 0..256u32 {
            let mut v = sc.clone();
            for bit in 0..8 {
                if mask >> bit & 1 == 1 {
                    let link = if bit < 4 { a } else { b };
                    v.demand.push(Demand { link, when: DemandTime::FineStep(bit as usize % 4), count });
                }
            }
            variants.push(v);
        }
    }
    let rep = check_fcfs_equivalence(&net, &variants, 2).unwrap();
    assert_eq!(rep.fcfs_cases_checked, 512);
    assert!(rep.is_clean(), "{:#?}", &rep.divergences[..rep.divergences.len().min(5)]);
}
