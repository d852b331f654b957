//! Receding-horizon signal control on top of the MILP window model.

use log::{info, warn};

use crate::error::{invalid, Error, Result};
use crate::milp::{
    assignment_from_trajectory, build_milp, solve_bnb_with_start, write_lp, BuildOptions, SolveOptions, SolveStatus, Symbol,
};
use crate::network::NetworkModel;
use crate::plan::SignalPlan;
use crate::scenario::ScenarioConfig;
use crate::sim::{SimState, Simulator, Trajectory};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub horizon: usize,
    pub reoptimize_every: usize,
    pub solve: SolveOptions,
    /// Cyclic stage order per intersection; empty means 0, 1, 2, ...
    pub fallback: Vec<Vec<usize>>,
    /// Intervals each fallback stage is held.
    pub fallback_hold: usize,
    /// Improve the cyclic starting point by single-stage swaps, scored with
    /// the simulator, before handing it to branch-and-bound.
    pub start_search: bool,
    pub build: BuildOptions,
}

impl ControllerConfig {
    pub fn new(horizon: usize) -> Self {
        ControllerConfig {
            horizon,
            reoptimize_every: 1,
            solve: SolveOptions::default(),
            fallback: Vec::new(),
            fallback_hold: 3,
            start_search: true,
            build: BuildOptions::default(),
        }
    }

    pub fn check(&self, net: &NetworkModel) -> Result<()> {
        if self.reoptimize_every < 1 || self.horizon < self.reoptimize_every {
            return invalid(format!(
                "need horizon ≥ reoptimize_every ≥ 1, got {} and {}",
                self.horizon, self.reoptimize_every
            ));
        }
        if !self.fallback.is_empty() {
            if self.fallback.len() != net.signalized.len() {
                return invalid("fallback cycle must list every signalized intersection");
            }
            for (j, cyc) in self.fallback.iter().enumerate() {
                let ns = net.signalized[j].stages.len();
                if cyc.is_empty() || cyc.iter().any(|&w| w >= ns) {
                    return invalid(format!("bad fallback cycle for {}", net.signalized[j].id));
                }
            }
        }
        if self.fallback_hold == 0 {
            return invalid("fallback_hold must be at least 1");
        }
        if self.build.fixed_plan.is_some() {
            return invalid("the controller chooses the plan; fixed_plan must be unset");
        }
        Ok(())
    }

    /// Stage of the fallback cycle at absolute interval k.
    pub fn cyclic_stage(&self, net: &NetworkModel, j: usize, k: usize) -> usize {
        let p = k / self.fallback_hold;
        match self.fallback.get(j) {
            Some(cyc) => cyc[p % cyc.len()],
            None => p % net.signalized[j].stages.len(),
        }
    }

    pub fn cyclic_plan(&self, net: &NetworkModel, n: usize) -> SignalPlan {
        SignalPlan::new(
            (0..net.signalized.len())
                .map(|j| (0..n).map(|k| self.cyclic_stage(net, j, k)).collect())
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Epoch {
    pub k0: usize,
    pub window: usize,
    pub status: SolveStatus,
    /// Window objective of the applied stages, None after a fallback.
    pub objective: Option<f64>,
    pub nodes: usize,
    pub wall_time: f64,
    /// The solve stopped at a limit; the applied stages are the better of
    /// the cyclic plan and the best incumbent.
    pub limited: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    pub trajectory: Trajectory,
    pub plan: SignalPlan,
    pub epochs: Vec<Epoch>,
}

impl ControlOutcome {
    pub fn limited_epochs(&self) -> usize {
        self.epochs.iter().filter(|e| e.limited).count()
    }
}

fn window_delay(sim: &Simulator, state: &SimState, plan: &SignalPlan, n: usize) -> Result<f64> {
    let traj = sim.run_from(state.clone(), plan, n)?;
    Ok(traj.records.iter().map(|r| r.delay.iter().sum::<f64>()).sum())
}

/// Best of the cycle and "hold the last stage", then first-improvement
/// single-stage swaps until none helps. Committed stages stay put.
fn improve_start(sim: &Simulator, state: &SimState, committed: &SignalPlan, cyclic: &SignalPlan, n: usize) -> Result<SignalPlan> {
    let net = sim.net;
    let k0 = state.k;
    let mut best = cyclic.clone();
    let mut best_d = window_delay(sim, state, &best, n)?;
    let mut hold = cyclic.clone();
    for (j, seq) in hold.stages.iter_mut().enumerate() {
        let from = committed.stages[j].len();
        if let Some(&w) = committed.stages[j].last() {
            for s in &mut seq[from..] {
                *s = w;
            }
        }
    }
    let d = window_delay(sim, state, &hold, n)?;
    if d < best_d {
        best = hold;
        best_d = d;
    }
    for _sweep in 0..4 {
        let mut improved = false;
        for j in 0..net.signalized.len() {
            for k in committed.stages[j].len().max(k0)..k0 + n {
                let current = best.stages[j][k];
                for w in 0..net.signalized[j].stages.len() {
                    if w == current {
                        continue;
                    }
                    let mut trial = best.clone();
                    trial.stages[j][k] = w;
                    let d = window_delay(sim, state, &trial, n)?;
                    if d < best_d - 1e-9 {
                        best = trial;
                        best_d = d;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(best)
}

/// Solves a window of min(N, H − k) intervals at every epoch, applies the
/// first `reoptimize_every` of them and commits the stage after that too,
/// since l(k) looks one interval ahead.
pub fn receding_horizon_control(net: &NetworkModel, sc: &ScenarioConfig, cfg: &ControllerConfig) -> Result<ControlOutcome> {
    if net.signalized.is_empty() {
        return invalid("receding-horizon control needs a signalized intersection");
    }
    cfg.check(net)?;
    let sim = Simulator::new(net, sc)?;
    let total = sc.horizon;
    let mut plan = SignalPlan::new(vec![Vec::new(); net.signalized.len()]);
    let mut state = sim.initial_state();
    let mut records = Vec::with_capacity(total);
    let mut epochs = Vec::new();
    let (mut injected_total, mut exited_total) = (0u64, 0u64);

    while state.k < total {
        let k0 = state.k;
        let n = cfg.horizon.min(total - k0);
        let commit = cfg.reoptimize_every.min(n);
        let build = build_milp(net, sc, &state, &plan, n, &cfg.build)?;

        // Cyclic plan over the window, keeping any stage already committed.
        let mut cyclic = plan.clone();
        for k in k0..k0 + n {
            let fixed: Vec<_> = (0..net.signalized.len()).map(|j| plan.stages[j].get(k).copied()).collect();
            if fixed.iter().all(Option::is_some) {
                continue;
            }
            let row: Vec<usize> = (0..net.signalized.len())
                .map(|j| fixed[j].unwrap_or_else(|| cfg.cyclic_stage(net, j, k)))
                .collect();
            cyclic.push(&row);
        }
        let start_plan = if cfg.start_search { improve_start(&sim, &state, &plan, &cyclic, n)? } else { cyclic.clone() };
        let start_traj = sim.run_from(state.clone(), &start_plan, n)?;
        let start = assignment_from_trajectory(&build, net, sc, &state, &start_traj)?;
        let cyclic_window = || -> Vec<Vec<usize>> {
            (0..net.signalized.len()).map(|j| cyclic.stages[j][k0..k0 + n].to_vec()).collect()
        };
        let mut opts = cfg.solve.clone();
        if opts.branch_priority.is_empty() {
            opts.branch_priority = build
                .atlas
                .iter()
                .map(|(_, s)| u32::from(matches!(s, Symbol::Stage { .. })))
                .collect();
        }
        let epoch = match solve_bnb_with_start(&build.model, &opts, Some(&start)) {
            Ok(sol) => {
                info!("epoch k0={k0} n={n} status={:?} objective={} nodes={}", sol.status, sol.objective, sol.nodes);
                if sol.status == SolveStatus::Infeasible {
                    return Err(Error::Internal {
                        message: format!("window MILP at k0={k0} (n={n}) is infeasible"),
                        model_lp: write_lp(&build.model).ok(),
                    });
                }
                let limited = sol.status != SolveStatus::Optimal;
                if limited {
                    warn!("epoch k0={k0}: solver limit after {} nodes, keeping the best of cycle and incumbent", sol.nodes);
                }
                let window = if sol.has_point() { build.plan_from_solution(net, &sol.values) } else { cyclic_window() };
                (window, Epoch {
                    k0,
                    window: n,
                    status: sol.status,
                    objective: sol.has_point().then_some(sol.objective),
                    nodes: sol.nodes,
                    wall_time: sol.wall_time,
                    limited,
                })
            }
            Err(Error::Solver(msg)) => {
                warn!("epoch k0={k0}: {msg}; cyclic fallback");
                (cyclic_window(), Epoch {
                    k0,
                    window: n,
                    status: SolveStatus::Limit,
                    objective: None,
                    nodes: 0,
                    wall_time: 0.0,
                    limited: true,
                })
            }
            Err(e) => return Err(e),
        };
        let window = epoch.0;
        epochs.push(epoch.1);

        // Commit stages k0 .. k0+commit, plus the look-ahead stage when it exists.
        let upto = (k0 + commit + 1).min(total).min(k0 + n);
        for k in plan.len()..upto {
            let row: Vec<usize> = window.iter().map(|w: &Vec<usize>| w[k - k0]).collect();
            plan.push(&row);
        }
        if k0 + commit < total && plan.len() == k0 + commit {
            // Window ended at the commit point; extend with its last stage.
            let row: Vec<usize> = window.iter().map(|w| w[n - 1]).collect();
            plan.push(&row);
        }

        for _ in 0..commit {
            let (next, rec) = sim.step_coarse(&state, &plan)?;
            injected_total += rec.injected.iter().map(|&x| x as u64).sum::<u64>();
            for (i, l) in net.links.iter().enumerate() {
                if l.is_exit() {
                    exited_total += rec.outflow[i] as u64;
                }
            }
            records.push(rec);
            state = next;
        }
    }

    let plan = plan.truncated(total);
    let trajectory = Trajectory { records, final_state: state, plan: plan.clone(), injected_total, exited_total };
    Ok(ControlOutcome { trajectory, plan, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;
    use crate::sim::{run_scenario, total_delay};

    const ONE_SIDED: &str = r#"{
        "links": [
            {"id": "a", "length_m": 200, "free_speed": 10},
            {"id": "b", "length_m": 200, "free_speed": 10},
            {"id": "xa", "length_m": 100, "free_speed": 10},
            {"id": "xb", "length_m": 100, "free_speed": 10}
        ],
        "signalized": [{"id": "J", "stages": [
            {"id": "A", "streams": [["a", "xa"]]},
            {"id": "B", "streams": [["b", "xb"]]}]}],
        "speed_levels": {"default": ["1", "3/4", "1/2"]},
        "initial": [{"link": "a", "volume": 30}],
        "demand": [{"link": "a", "interval": 1, "count": 10}, {"link": "a", "interval": 2, "count": 10}],
        "delta_s": 10, "lambda_s": 10, "horizon": 4
    }"#;

    #[test]
    fn one_sided_demand_keeps_green_on_the_loaded_approach() {
        let (net, sc) = parse_scenario(ONE_SIDED).unwrap();
        for r in [1, 2, 4] {
            let mut cfg = ControllerConfig::new(4);
            cfg.reoptimize_every = r;
            let out = receding_horizon_control(&net, &sc, &cfg).unwrap();
            assert_eq!(out.plan.stages, vec![vec![0; 4]], "R={r}");
            assert_eq!(out.limited_epochs(), 0);
        }
    }

    #[test]
    fn zero_demand_costs_nothing() {
        let text = ONE_SIDED.replace(r#"{"link": "a", "volume": 30}"#, "").replace(
            r#"{"link": "a", "interval": 1, "count": 10}, {"link": "a", "interval": 2, "count": 10}"#,
            "",
        );
        let (net, sc) = parse_scenario(&text).unwrap();
        let out = receding_horizon_control(&net, &sc, &ControllerConfig::new(2)).unwrap();
        assert_eq!(total_delay(&out.trajectory, &net, sc.delta_s).total, 0.0);
    }

    #[test]
    fn node_limit_falls_back_to_the_cycle() {
        let (net, sc) = parse_scenario(ONE_SIDED).unwrap();
        let mut cfg = ControllerConfig::new(4);
        cfg.solve.node_limit = 0;
        cfg.start_search = false;
        cfg.fallback_hold = 1;
        let out = receding_horizon_control(&net, &sc, &cfg).unwrap();
        // The last epoch has its only stage committed already.
        assert!(out.epochs[..3].iter().all(|e| e.limited), "{:?}", out.epochs);
        assert_eq!(out.plan.stages, vec![vec![0, 1, 0, 1]]);
        let fixed = run_scenario(&net, &sc, &cfg.cyclic_plan(&net, 4)).unwrap();
        assert_eq!(out.trajectory.records, fixed.records);
    }

    #[test]
    fn applied_trajectory_matches_a_replay_of_the_plan() {
        let (net, sc) = parse_scenario(ONE_SIDED.replace(r#""initial": [{"link": "a", "volume": 30}]"#, r#""initial": [{"link": "a", "volume": 12}, {"link": "b", "volume": 9}]"#).as_str()).unwrap();
        let mut cfg = ControllerConfig::new(2);
        cfg.reoptimize_every = 1;
        let out = receding_horizon_control(&net, &sc, &cfg).unwrap();
        let replay = run_scenario(&net, &sc, &out.plan).unwrap();
        assert_eq!(out.trajectory.records, replay.records);
        assert_eq!(out.trajectory.final_state, replay.final_state);
    }

    #[test]
    fn bad_configs_are_refused() {
        let (net, sc) = parse_scenario(ONE_SIDED).unwrap();
        let mut cfg = ControllerConfig::new(2);
        cfg.reoptimize_every = 3;
        assert!(receding_horizon_control(&net, &sc, &cfg).is_err());
        cfg.reoptimize_every = 0;
        assert!(receding_horizon_control(&net, &sc, &cfg).is_err());
        let mut cfg = ControllerConfig::new(2);
        cfg.fallback = vec![vec![2]];
        assert!(receding_horizon_control(&net, &sc, &cfg).is_err());
    }
}
