//! Browser bindings for the static demo page in `www/`.

use hetnet::control::{receding_horizon_control, ControllerConfig};
use hetnet::export::{parse_plan, summarize};
use hetnet::fcfs::Indicator;
use hetnet::{parse_scenario, run_scenario, total_delay, SignalPlan};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Runs a scenario under a plan (or the default cycle when `plan_json` is empty).
pub fn simulate(scenario_json: &str, plan_json: &str) -> Result<Value, String> {
    let (net, sc) = parse_scenario(scenario_json).map_err(fail)?;
    let plan = if plan_json.trim().is_empty() {
        ControllerConfig::new(1).cyclic_plan(&net, sc.horizon)
    } else {
        parse_plan(plan_json, &net).map_err(fail)?
    };
    let traj = run_scenario(&net, &sc, &plan).map_err(fail)?;
    let d = total_delay(&traj, &net, sc.delta_s);
    let volumes: Vec<Value> = net
        .links
        .iter()
        .enumerate()
        .map(|(i, l)| json!({"link": l.id, "volume": traj.records.iter().map(|r| r.volumes[i]).collect::<Vec<_>>()}))
        .collect();
    Ok(json!({
        "summary": summarize(&traj, &net, sc.delta_s),
        "delay_per_interval": d.per_interval,
        "volumes": volumes,
    }))
}

/// Fine-step virtual greens and indicators at every all-way-stop intersection.
pub fn fcfs_timeline(scenario_json: &str) -> Result<Value, String> {
    let (net, sc) = parse_scenario(scenario_json).map_err(fail)?;
    let plan = ControllerConfig::new(1).cyclic_plan(&net, sc.horizon);
    let traj = run_scenario(&net, &sc, &plan).map_err(fail)?;
    let mut out = Vec::new();
    for (j, x) in net.nonsignalized.iter().enumerate() {
        let groups: Vec<String> = x.groups.iter().map(|g| g.iter().map(|&l| net.links[l].id.as_str()).collect::<Vec<_>>().join("+")).collect();
        let steps: Vec<Value> = traj
            .records
            .iter()
            .flat_map(|r| r.fine.iter())
            .map(|f| {
                let ind: Vec<Value> = f.indicators[j]
                    .iter()
                    .map(|t| match t {
                        Indicator::Since(s) => json!(s),
                        Indicator::Empty => Value::Null,
                    })
                    .collect();
                let waiting: Vec<u32> = x.groups.iter().map(|g| g.iter().map(|&l| f.segments[l][0]).sum()).collect();
                json!({"t": f.t, "green": f.greens[j], "indicators": ind, "front": waiting})
            })
            .collect();
        out.push(json!({"id": x.id, "groups": groups, "steps": steps}));
    }
    Ok(json!(out))
}

/// Receding-horizon control against the default cycle on one scenario.
/// `node_limit` 0 keeps the solver default; there is no clock in the browser.
pub fn compare_control(scenario_json: &str, window: usize, node_limit: usize) -> Result<Value, String> {
    let (net, sc) = parse_scenario(scenario_json).map_err(fail)?;
    let mut cfg = ControllerConfig::new(window);
    if node_limit > 0 {
        cfg.solve.node_limit = node_limit;
    }
    let cyclic_plan = cfg.cyclic_plan(&net, sc.horizon);
    let cyclic = run_scenario(&net, &sc, &cyclic_plan).map_err(fail)?;
    let out = receding_horizon_control(&net, &sc, &cfg).map_err(fail)?;
    let stage_names = |p: &SignalPlan| -> Vec<Value> {
        net.signalized
            .iter()
            .zip(&p.stages)
            .map(|(s, seq)| json!({"id": s.id, "stages": seq.iter().map(|&w| s.stages[w].id.clone()).collect::<Vec<_>>()}))
            .collect()
    };
    Ok(json!({
        "cyclic": {"delay": total_delay(&cyclic, &net, sc.delta_s).total, "plan": stage_names(&cyclic_plan)},
        "optimized": {
            "delay": total_delay(&out.trajectory, &net, sc.delta_s).total,
            "plan": stage_names(&out.plan),
            "limited_epochs": out.limited_epochs(),
        },
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(scenario_json: &str, plan_json: &str) -> Result<String, JsValue> {
    to_js(simulate(scenario_json, plan_json))
}

#[wasm_bindgen(js_name = fcfsTimeline)]
pub fn fcfs_timeline_js(scenario_json: &str) -> Result<String, JsValue> {
    to_js(fcfs_timeline(scenario_json))
}

#[wasm_bindgen(js_name = compareControl)]
pub fn compare_control_js(scenario_json: &str, window: usize, node_limit: usize) -> Result<String, JsValue> {
    to_js(compare_control(scenario_json, window, node_limit))
}
