//! Exhaustive agreement checks between the simulator and the MILP on small
//! instances.

use super::atlas::Symbol;
use super::bnb::{solve_bnb, SolveOptions, SolveStatus};
use super::build::{assignment_from_trajectory, build_milp, speed_rows, BuildOptions, MilpBuild};
use super::model::{LinExpr, MilpModel, Sense, VarKind};
use crate::error::{Error, Result};
use crate::network::{Level, NetworkModel, SpeedLevelTable};
use crate::plan::SignalPlan;
use crate::scenario::ScenarioConfig;
use crate::signal::{level_f64, speed_level};
use crate::sim::{total_delay, SimState, Simulator};
use serde::Serialize;

/// Largest enumeration `check_equivalence` accepts.
pub const ENUMERATION_LIMIT: u128 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub plan: Vec<Vec<usize>>,
    pub check: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EquivalenceReport {
    pub plans_checked: usize,
    pub gate_points_checked: usize,
    pub speed_windows_checked: usize,
    pub fcfs_cases_checked: usize,
    pub solves: usize,
    pub divergences: Vec<Divergence>,
}

impl EquivalenceReport {
    pub fn is_clean(&self) -> bool {
        self.divergences.is_empty()
    }

    fn merge(&mut self, o: EquivalenceReport) {
        self.plans_checked += o.plans_checked;
        self.gate_points_checked += o.gate_points_checked;
        self.speed_windows_checked += o.speed_windows_checked;
        self.fcfs_cases_checked += o.fcfs_cases_checked;
        self.solves += o.solves;
        self.divergences.extend(o.divergences);
    }
}

/// Number of one-hot stage sequences over `n` intervals.
pub fn plan_count(net: &NetworkModel, n: usize) -> u128 {
    net.signalized
        .iter()
        .map(|j| (j.stages.len() as u128).saturating_pow(n as u32))
        .fold(1u128, |a, b| a.saturating_mul(b))
}

/// All one-hot sequences, mixed-radix order with intersection 0 fastest.
pub fn all_plans(net: &NetworkModel, n: usize) -> Result<Vec<SignalPlan>> {
    let size = plan_count(net, n);
    if size > ENUMERATION_LIMIT {
        return Err(Error::TooLarge { size, limit: ENUMERATION_LIMIT });
    }
    let radices: Vec<usize> = net
        .signalized
        .iter()
        .flat_map(|j| std::iter::repeat_n(j.stages.len(), n))
        .collect();
    let mut out = Vec::with_capacity(size as usize);
    for mut code in 0..size as usize {
        let mut stages = vec![Vec::with_capacity(n); net.signalized.len()];
        for (p, &rad) in radices.iter().enumerate() {
            stages[p / n.max(1)].push(code % rad);
            code /= rad;
        }
        out.push(SignalPlan::new(stages));
    }
    Ok(out)
}

fn with_objective(model: &MilpModel, expr: &LinExpr) -> MilpModel {
    let mut m = model.clone();
    m.set_objective(expr);
    m
}

fn fix(model: &mut MilpModel, var: usize, value: f64) {
    model.variables[var].lower = value;
    model.variables[var].upper = value;
}

/// Range of `var` over the model's integer points, or None if infeasible.
fn range(model: &MilpModel, var: usize, solves: &mut usize) -> Result<Option<(f64, f64)>> {
    let opts = SolveOptions::default();
    let lo = solve_bnb(&with_objective(model, &LinExpr::var(var)), &opts)?;
    let hi = solve_bnb(&with_objective(model, &LinExpr::var(var).scaled(-1.0)), &opts)?;
    *solves += 2;
    match (lo.status, hi.status) {
        (SolveStatus::Optimal, SolveStatus::Optimal) => Ok(Some((lo.objective, -hi.objective))),
        (SolveStatus::Infeasible, _) | (_, SolveStatus::Infeasible) => Ok(None),
        _ => Err(Error::Solver("range solve hit a limit".into())),
    }
}

/// Simulator ↔ MILP agreement for every stage sequence over `n` intervals
/// from the scenario's initial state.
///
/// Per sequence: the simulated window satisfies every row and its objective
/// equals the simulated delay; with θ fixed the MILP optimum equals that
/// delay; every speed selector and level has a single feasible value, the
/// simulated one. Also checks the stage gate on all (θ, f) points and the
/// speed rows on every θ window.
pub fn check_equivalence(net: &NetworkModel, sc: &ScenarioConfig, n: usize, opts: &BuildOptions) -> Result<EquivalenceReport> {
    let plans = all_plans(net, n)?;
    let sim = Simulator::new(net, sc)?;
    let s0 = sim.initial_state();
    let mut rep = EquivalenceReport::default();
    for plan in &plans {
        let fixed = BuildOptions { fixed_plan: Some(plan.clone()), ..opts.clone() };
        let b = build_milp(net, sc, &s0, &SignalPlan::new(vec![vec![]; net.signalized.len()]), n, &fixed)?;
        check_plan(net, sc, &sim, &s0, plan, &b, &mut rep)?;
        rep.plans_checked += 1;
    }
    rep.merge(check_gate_rows(net, opts));
    for st in &net.streams {
        if let Some(t) = &st.levels {
            rep.merge(check_speed_rows(t));
        }
    }
    Ok(rep)
}

fn check_plan(
    net: &NetworkModel,
    sc: &ScenarioConfig,
    sim: &Simulator,
    s0: &SimState,
    plan: &SignalPlan,
    b: &MilpBuild,
    rep: &mut EquivalenceReport,
) -> Result<()> {
    let div = |check: &str, detail: String| Divergence { plan: plan.stages.clone(), check: check.into(), detail };
    let traj = sim.run_from(s0.clone(), plan, b.n)?;
    let delay = total_delay(&traj, net, sc.delta_s).total;
    let x = assignment_from_trajectory(b, net, sc, s0, &traj)?;
    let v = b.model.violations(&x, 1e-9);
    if let Some(first) = v.first() {
        rep.divergences.push(div("simulated point feasible", format!("{} rows broken, first {} by {}", v.len(), first.row, first.amount)));
        return Ok(());
    }
    let z = b.model.objective_value(&x);
    if (z - delay).abs() > 1e-6 {
        rep.divergences.push(div("objective equals delay", format!("objective {z}, delay {delay}")));
    }
    let sol = solve_bnb(&b.model, &SolveOptions::default())?;
    rep.solves += 1;
    if sol.status != SolveStatus::Optimal || (sol.objective - delay).abs() > 1e-6 {
        rep.divergences.push(div("optimum equals delay", format!("{:?} objective {}, delay {delay}", sol.status, sol.objective)));
    }
    for (var, sym) in b.atlas.iter() {
        if !matches!(sym, Symbol::SpeedSel { .. } | Symbol::SpeedLevel { .. }) {
            continue;
        }
        match range(&b.model, var, &mut rep.solves)? {
            Some((lo, hi)) if (lo - x[var]).abs() <= 1e-7 && (hi - x[var]).abs() <= 1e-7 => {}
            r => rep.divergences.push(div("speed variable pinned", format!("{} range {r:?}, simulated {}", b.model.variables[var].name, x[var]))),
        }
    }
    Ok(())
}

/// Gate rows f ≤ M·θ against "f > 0 only when green" over every
/// θ ∈ {0, 1} and integer f ∈ [0, Ĉ].
pub fn check_gate_rows(net: &NetworkModel, opts: &BuildOptions) -> EquivalenceReport {
    let mut rep = EquivalenceReport::default();
    let cap = net.max_capacity();
    let big_m = opts.big_m.unwrap_or(cap as f64 + 1.0);
    let mut m = MilpModel::new("gate");
    let f = m.add_var("f", VarKind::Integer, 0.0, cap as f64);
    let th = m.add_var("theta", VarKind::Binary, 0.0, 1.0);
    m.add_row("gate", &LinExpr::var(f).add(th, -big_m), Sense::Le, 0.0, Some(big_m));
    for t in 0..=1u32 {
        for fv in 0..=cap {
            let feasible = m.violations(&[fv as f64, t as f64], 1e-12).is_empty();
            let logic = t == 1 || fv == 0;
            rep.gate_points_checked += 1;
            if feasible != logic {
                rep.divergences.push(Divergence {
                    plan: vec![],
                    check: "gate rows".into(),
                    detail: format!("theta={t} f={fv}: rows {feasible}, logic {logic}"),
                });
            }
        }
    }
    rep
}

/// Feasible interval of l for fixed θ and δ, from the speed rows alone.
fn level_interval(rows: &[(String, LinExpr, Sense, f64)], delta: &[usize], level: usize, dvals: &[f64]) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for (_, e, sense, rhs) in rows {
        let mut a = 0.0;
        let mut rest = e.constant;
        for &(j, c) in &e.terms {
            if j == level {
                a += c;
            } else {
                let p = delta.iter().position(|&d| d == j).expect("row uses only δ and l");
                rest += c * dvals[p];
            }
        }
        let b = rhs - rest;
        let tol = 1e-12;
        let (le, ge) = match sense {
            Sense::Le => (true, false),
            Sense::Ge => (false, true),
            Sense::Eq => (true, true),
        };
        if a == 0.0 {
            if (le && 0.0 > b + tol) || (ge && 0.0 < b - tol) {
                return None;
            }
            continue;
        }
        let v = b / a;
        // a·l ≤ b  ⇔ l ≤ b/a for a > 0, l ≥ b/a for a < 0.
        if le {
            if a > 0.0 {
                hi = hi.min(v)
            } else {
                lo = lo.max(v)
            }
        }
        if ge {
            if a > 0.0 {
                lo = lo.max(v)
            } else {
                hi = hi.min(v)
            }
        }
    }
    (lo <= hi + 1e-12).then_some((lo, hi))
}

/// Speed rows against `speed_level` on every θ sequence of length r + 4,
/// at each position whose full window lies inside the sequence. θ before
/// the sequence is red and the level starts at 0.
pub fn check_speed_rows(table: &SpeedLevelTable) -> EquivalenceReport {
    let r = table.memory_depth();
    let len = r + 4;
    let mut rep = EquivalenceReport::default();
    // Variable ids: δ^0..δ^r then l.
    let delta: Vec<usize> = (0..=r).collect();
    let level = r + 1;
    for mask in 0..1u32 << len {
        let theta: Vec<bool> = (0..len).map(|k| mask >> k & 1 == 1).collect();
        let th = |k: isize| k >= 0 && theta[(k as usize).min(len - 1)];
        let mut prev = Level::from_integer(0);
        let mut levels = Vec::with_capacity(len - 1);
        for k in 0..len - 1 {
            let hist: Vec<bool> = (0..r + 2).map(|q| th(k as isize - (r + 1) as isize + q as isize)).collect();
            let l = speed_level(&hist, th(k as isize + 1), prev, table).expect("valid table");
            levels.push(l);
            prev = l;
        }
        for k in 0..len - 1 {
            let consts: Vec<LinExpr> = (0..r + 3)
                .map(|p| LinExpr::constant(if th(k as isize + 1 - p as isize) { 1.0 } else { 0.0 }))
                .collect();
            let prev_l = if k == 0 { 0.0 } else { level_f64(&levels[k - 1]) };
            let rows = speed_rows(&consts, &delta, level, &LinExpr::constant(prev_l), table);
            let l_sim = level_f64(&levels[k]);
            let hist: Vec<bool> = (0..r + 2).map(|q| th(k as isize - (r + 1) as isize + q as isize)).collect();
            let sel = crate::signal::green_run(&hist, r).map(|q| r - q);
            rep.speed_windows_checked += 1;
            for dmask in 0..1u32 << (r + 1) {
                let dvals: Vec<f64> = (0..=r).map(|p| (dmask >> p & 1) as f64).collect();
                let expected_here = match sel {
                    Some(p) => dmask == 1 << p,
                    None => dmask == 0,
                };
                let got = level_interval(&rows, &delta, level, &dvals);
                let ok = match (expected_here, got) {
                    (true, Some((lo, hi))) => (lo - l_sim).abs() < 1e-12 && (hi - l_sim).abs() < 1e-12,
                    (false, None) => true,
                    _ => false,
                };
                if !ok {
                    rep.divergences.push(Divergence {
                        plan: vec![theta.iter().map(|&b| b as usize).collect()],
                        check: "speed rows".into(),
                        detail: format!("k={k} delta={dvals:?}: rows give {got:?}, speed_level gives {l_sim}"),
                    });
                }
            }
        }
    }
    rep
}

/// All-way-stop agreement: for each scenario variant, with every flow and
/// volume fixed to the simulated values, the indicator, selection and
/// virtual-green variables have exactly one feasible assignment, the
/// simulated one.
pub fn check_fcfs_equivalence(net: &NetworkModel, variants: &[ScenarioConfig], n: usize) -> Result<EquivalenceReport> {
    let mut rep = EquivalenceReport::default();
    let plan = SignalPlan::new(vec![vec![0; n]; net.signalized.len()]);
    for (case, sc) in variants.iter().enumerate() {
        let sim = Simulator::new(net, sc)?;
        let s0 = sim.initial_state();
        let traj = sim.run_from(s0.clone(), &plan, n)?;
        let b = build_milp(net, sc, &s0, &plan, n, &BuildOptions { fixed_plan: Some(plan.clone()), ..Default::default() })?;
        let x = assignment_from_trajectory(&b, net, sc, &s0, &traj)?;
        let div = |check: &str, detail: String| Divergence { plan: vec![vec![case]], check: check.into(), detail };
        rep.fcfs_cases_checked += 1;
        if let Some(v) = b.model.violations(&x, 1e-9).first() {
            rep.divergences.push(div("simulated point feasible", format!("{} by {}", v.row, v.amount)));
            continue;
        }
        let fcfs = |s: &Symbol| {
            matches!(
                s,
                Symbol::Arrival { .. }
                    | Symbol::Occupied { .. }
                    | Symbol::KeepSide { .. }
                    | Symbol::StartSide { .. }
                    | Symbol::ProdArrival { .. }
                    | Symbol::ProdTime { .. }
                    | Symbol::Later { .. }
                    | Symbol::VirtualGreen { .. }
            )
        };
        let mut m = b.model.clone();
        for (var, sym) in b.atlas.iter() {
            if !fcfs(sym) {
                fix(&mut m, var, x[var]);
            }
        }
        // Largest Hamming distance from the simulated binaries.
        let mut far = LinExpr::new();
        for (var, sym) in b.atlas.iter() {
            if fcfs(sym) && m.variables[var].kind == VarKind::Binary {
                if x[var] > 0.5 {
                    far = far.add(var, 1.0).plus_const(-1.0);
                } else {
                    far = far.add(var, -1.0);
                }
            }
        }
        let sol = solve_bnb(&with_objective(&m, &far), &SolveOptions::default())?;
        rep.solves += 1;
        if sol.status != SolveStatus::Optimal || sol.objective < -1e-9 {
            let flipped: Vec<String> = b
                .atlas
                .iter()
                .filter(|(v, s)| fcfs(s) && m.variables[*v].kind == VarKind::Binary && (sol.values[*v] - x[*v]).abs() > 0.5)
                .map(|(v, _)| m.variables[v].name.clone())
                .collect();
            rep.divergences.push(div("fcfs binaries unique", format!("{:?}, flipped {flipped:?}", sol.status)));
            continue;
        }
        for (var, sym) in b.atlas.iter() {
            if fcfs(sym) && m.variables[var].kind == VarKind::Binary {
                fix(&mut m, var, x[var]);
            }
        }
        for (var, sym) in b.atlas.iter() {
            if !matches!(sym, Symbol::Arrival { .. } | Symbol::ProdArrival { .. }) || m.variables[var].lower == m.variables[var].upper {
                continue;
            }
            match range(&m, var, &mut rep.solves)? {
                Some((lo, hi)) if (lo - x[var]).abs() <= 1e-7 && (hi - x[var]).abs() <= 1e-7 => {}
                r => rep.divergences.push(div("indicator pinned", format!("{} range {r:?}, simulated {}", m.variables[var].name, x[var]))),
            }
        }
    }
    Ok(rep)
}
