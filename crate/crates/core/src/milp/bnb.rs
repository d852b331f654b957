//! Best-first branch-and-bound over the dual simplex.

use super::model::{MilpModel, Sense};
use super::simplex::{DualSimplex, LpProblem, LpStatus};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    Limit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Relative gap at which an incumbent counts as optimal.
    pub gap_tol: f64,
    pub node_limit: usize,
    /// Seconds; ignored where no clock is available.
    pub time_limit: Option<f64>,
    pub lp_iteration_limit: usize,
    /// Per model variable; fractional variables of higher priority are
    /// branched on first. Empty means all equal.
    pub branch_priority: Vec<u32>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gap_tol: 0.0,
            node_limit: 200_000,
            time_limit: None,
            lp_iteration_limit: 200_000,
            branch_priority: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub nodes: usize,
    pub wall_time: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolutionFile {
    values: BTreeMap<String, f64>,
    objective: Option<f64>,
    status: SolveStatus,
    nodes: usize,
    wall_time: f64,
}

impl Solution {
    pub fn has_point(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::Feasible)
    }

    pub fn to_json(&self, model: &MilpModel) -> String {
        let values = if self.has_point() {
            model.variables.iter().zip(&self.values).map(|(v, &x)| (v.name.clone(), x)).collect()
        } else {
            BTreeMap::new()
        };
        let f = SolutionFile {
            values,
            objective: self.has_point().then_some(self.objective),
            status: self.status,
            nodes: self.nodes,
            wall_time: self.wall_time,
        };
        serde_json::to_string_pretty(&f).expect("solution serializes")
    }

    pub fn from_json(text: &str, model: &MilpModel) -> Result<Self> {
        let f: SolutionFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut values = vec![0.0; model.variables.len()];
        if !f.values.is_empty() {
            for (j, v) in model.variables.iter().enumerate() {
                values[j] = *f
                    .values
                    .get(&v.name)
                    .ok_or_else(|| Error::Parse(format!("solution lacks {}", v.name)))?;
            }
        }
        Ok(Solution {
            values,
            objective: f.objective.unwrap_or(f64::NAN),
            status: f.status,
            nodes: f.nodes,
            wall_time: f.wall_time,
        })
    }
}

struct Clock {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Clock {
    fn start() -> Self {
        Clock {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

/// Root bound tightening: fixed columns are substituted out, singleton rows
/// become bounds, rows implied by the bounds are dropped.
pub struct Presolved {
    pub lp: LpProblem,
    /// Model column of each kept column.
    pub cols: Vec<usize>,
    pub integral: Vec<bool>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub offset: f64,
}

const FEAS_TOL: f64 = 1e-9;

fn round_bounds(lo: &mut f64, hi: &mut f64, integral: bool) {
    if integral {
        *lo = (*lo - 1e-9).ceil();
        *hi = (*hi + 1e-9).floor();
    }
}

pub fn presolve(model: &MilpModel) -> Option<Presolved> {
    let nv = model.variables.len();
    let mut lo: Vec<f64> = model.variables.iter().map(|v| v.lower).collect();
    let mut hi: Vec<f64> = model.variables.iter().map(|v| v.upper).collect();
    let integral: Vec<bool> = model.variables.iter().map(|v| v.is_integral()).collect();
    for j in 0..nv {
        round_bounds(&mut lo[j], &mut hi[j], integral[j]);
        if lo[j] > hi[j] + FEAS_TOL {
            return None;
        }
    }
    let mut live = vec![true; model.constraints.len()];
    for _pass in 0..20 {
        let mut changed = false;
        for (i, c) in model.constraints.iter().enumerate() {
            if !live[i] {
                continue;
            }
            let mut fixed_part = 0.0;
            let mut free: Vec<(usize, f64)> = Vec::new();
            for &(j, a) in &c.terms {
                if lo[j] == hi[j] {
                    fixed_part += a * lo[j];
                } else {
                    free.push((j, a));
                }
            }
            let rhs = c.rhs - fixed_part;
            let (rlo, rhi) = match c.sense {
                Sense::Le => (f64::NEG_INFINITY, rhs),
                Sense::Ge => (rhs, f64::INFINITY),
                Sense::Eq => (rhs, rhs),
            };
            let (mut amin, mut amax) = (0.0, 0.0);
            for &(j, a) in &free {
                let (u, v) = (a * lo[j], a * hi[j]);
                amin += u.min(v);
                amax += u.max(v);
            }
            let tol = FEAS_TOL * (1.0 + rhs.abs());
            if amin > rhi + tol || amax < rlo - tol {
                return None;
            }
            if amin >= rlo - tol && amax <= rhi + tol {
                live[i] = false;
                changed = true;
                continue;
            }
            if let [(j, a)] = free[..] {
                let (mut l, mut h) = if a > 0.0 { (rlo / a, rhi / a) } else { (rhi / a, rlo / a) };
                round_bounds(&mut l, &mut h, integral[j]);
                if l > lo[j] + 1e-12 {
                    lo[j] = l;
                    changed = true;
                }
                if h < hi[j] - 1e-12 {
                    hi[j] = h;
                    changed = true;
                }
                if lo[j] > hi[j] + FEAS_TOL {
                    return None;
                }
                if (hi[j] - lo[j]).abs() <= FEAS_TOL {
                    hi[j] = lo[j];
                }
                live[i] = false;
            }
        }
        if !changed {
            break;
        }
    }
    let cols: Vec<usize> = (0..nv).filter(|&j| lo[j] < hi[j]).collect();
    let mut pos = vec![usize::MAX; nv];
    for (p, &j) in cols.iter().enumerate() {
        pos[j] = p;
    }
    let mut lp = LpProblem { rows: Vec::new(), row_lo: Vec::new(), row_hi: Vec::new(), cost: vec![0.0; cols.len()], lo: Vec::new(), hi: Vec::new() };
    for (i, c) in model.constraints.iter().enumerate() {
        if !live[i] {
            continue;
        }
        let mut fixed_part = 0.0;
        let mut row = Vec::new();
        for &(j, a) in &c.terms {
            if pos[j] == usize::MAX {
                fixed_part += a * lo[j];
            } else {
                row.push((pos[j], a));
            }
        }
        let rhs = c.rhs - fixed_part;
        let (rlo, rhi) = match c.sense {
            Sense::Le => (f64::NEG_INFINITY, rhs),
            Sense::Ge => (rhs, f64::INFINITY),
            Sense::Eq => (rhs, rhs),
        };
        if row.is_empty() {
            if 0.0 < rlo - FEAS_TOL * (1.0 + rhs.abs()) || 0.0 > rhi + FEAS_TOL * (1.0 + rhs.abs()) {
                return None;
            }
            continue;
        }
        lp.rows.push(row);
        lp.row_lo.push(rlo);
        lp.row_hi.push(rhi);
    }
    let mut offset = model.objective_constant;
    for &(j, c) in &model.objective {
        if pos[j] == usize::MAX {
            offset += c * lo[j];
        } else {
            lp.cost[pos[j]] += c;
        }
    }
    lp.lo = cols.iter().map(|&j| lo[j]).collect();
    lp.hi = cols.iter().map(|&j| hi[j]).collect();
    let integral_kept = cols.iter().map(|&j| integral[j]).collect();
    Some(Presolved { lp, cols, integral: integral_kept, lo, hi, offset })
}

#[derive(Debug)]
struct Node {
    bound: f64,
    depth: usize,
    seq: usize,
    changes: Vec<(usize, f64, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    /// Max-heap order: lowest bound first, then deepest, then oldest.
    fn cmp(&self, o: &Self) -> Ordering {
        o.bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then(self.depth.cmp(&o.depth))
            .then(o.seq.cmp(&self.seq))
    }
}

fn full_point(pre: &Presolved, x: &[f64]) -> Vec<f64> {
    let mut v = pre.lo.clone();
    for (p, &j) in pre.cols.iter().enumerate() {
        v[j] = if pre.integral[p] { x[p].round() } else { x[p] };
    }
    v
}

pub fn solve_bnb(model: &MilpModel, opts: &SolveOptions) -> Result<Solution> {
    solve_bnb_with_start(model, opts, None)
}

/// Branch-and-bound with an optional feasible starting point as the first
/// incumbent. A start that breaks a row is ignored.
pub fn solve_bnb_with_start(model: &MilpModel, opts: &SolveOptions, start: Option<&[f64]>) -> Result<Solution> {
    let clock = Clock::start();
    model.check()?;
    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    if let Some(x) = start {
        if x.len() == model.variables.len() && model.violations(x, 1e-9).is_empty() {
            incumbent = Some((x.to_vec(), model.objective_value(x)));
        } else {
            log::warn!("starting point rejected: not feasible");
        }
    }
    let finish = |incumbent: Option<(Vec<f64>, f64)>, status: SolveStatus, nodes: usize| -> Solution {
        let (values, objective) = incumbent.unwrap_or((vec![0.0; model.variables.len()], f64::NAN));
        Solution { values, objective, status, nodes, wall_time: clock.elapsed() }
    };
    let Some(pre) = presolve(model) else {
        return Ok(finish(None, SolveStatus::Infeasible, 0));
    };
    let integral_objective = model.objective.iter().all(|&(j, c)| c.fract() == 0.0 && model.variables[j].is_integral())
        && model.objective_constant.fract() == 0.0;
    let cutoff = |inc: &Option<(Vec<f64>, f64)>, bound: f64| -> bool {
        match inc {
            None => false,
            Some((_, z)) => {
                let b = if integral_objective { (bound - 1e-6).ceil() } else { bound };
                b >= z - 1e-9 - opts.gap_tol * z.abs().max(1.0)
            }
        }
    };
    if pre.cols.is_empty() {
        let x = full_point(&pre, &[]);
        if !model.violations(&x, 1e-9).is_empty() {
            return Ok(finish(incumbent, SolveStatus::Infeasible, 0));
        }
        let z = model.objective_value(&x);
        return Ok(finish(Some((x, z)), SolveStatus::Optimal, 0));
    }
    let mut lp = DualSimplex::new(&pre.lp)?;
    let root_lo = pre.lp.lo.clone();
    let root_hi = pre.lp.hi.clone();
    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: f64::NEG_INFINITY, depth: 0, seq: 0, changes: Vec::new() });
    let mut seq = 1;
    let mut nodes = 0usize;
    let mut limit_hit = false;
    // Plunge: one child of each branching is solved next, the other waits in the heap.
    let mut dive: Option<Node> = None;
    while let Some(node) = dive.take().or_else(|| heap.pop()) {
        if cutoff(&incumbent, node.bound) {
            continue;
        }
        if nodes >= opts.node_limit || opts.time_limit.is_some_and(|t| clock.elapsed() > t) {
            limit_hit = true;
            heap.push(node);
            break;
        }
        nodes += 1;
        let (mut lo, mut hi) = (root_lo.clone(), root_hi.clone());
        for &(p, l, h) in &node.changes {
            lo[p] = lo[p].max(l);
            hi[p] = hi[p].min(h);
        }
        lp.set_bounds(&lo, &hi);
        let out_of_time = || opts.time_limit.is_some_and(|t| clock.elapsed() > t);
        match lp.solve_with(lp.iterations + opts.lp_iteration_limit, &out_of_time) {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => continue,
            LpStatus::Interrupted => {
                limit_hit = true;
                heap.push(node);
                break;
            }
            LpStatus::IterationLimit => {
                return Err(Error::Solver(format!(
                    "LP iteration limit at node {nodes} (depth {}, {} bound changes)",
                    node.depth,
                    node.changes.len()
                )))
            }
        }
        if lp.touches_artificial() {
            return Err(Error::Solver(format!("LP relaxation unbounded at node {nodes}")));
        }
        let x = lp.solution();
        let z = lp.objective() + pre.offset;
        if cutoff(&incumbent, z) {
            continue;
        }
        let mut branch: Option<(usize, u32, f64)> = None;
        for p in 0..x.len() {
            if !pre.integral[p] {
                continue;
            }
            let f = x[p] - x[p].floor();
            let score = f.min(1.0 - f);
            if score <= 1e-6 {
                continue;
            }
            let prio = opts.branch_priority.get(pre.cols[p]).copied().unwrap_or(0);
            if branch.is_none_or(|(_, bp, s)| prio > bp || (prio == bp && score > s + 1e-12)) {
                branch = Some((p, prio, score));
            }
        }
        match branch {
            None => {
                let full = full_point(&pre, &x);
                let v = model.violations(&full, 1e-6);
                if !v.is_empty() {
                    return Err(Error::Solver(format!(
                        "integral LP point at node {nodes} breaks {} (by {:.3e})",
                        v[0].row, v[0].amount
                    )));
                }
                let zf = model.objective_value(&full);
                if incumbent.as_ref().is_none_or(|(_, zi)| zf < *zi - 1e-9) {
                    incumbent = Some((full, zf));
                }
            }
            Some((p, _, _)) => {
                let v = x[p];
                let up_first = v - v.floor() >= 0.5;
                for (i, (l, h)) in [(f64::NEG_INFINITY, v.floor()), (v.ceil(), f64::INFINITY)].into_iter().enumerate() {
                    let mut changes = node.changes.clone();
                    changes.push((p, l, h));
                    let child = Node { bound: z, depth: node.depth + 1, seq, changes };
                    seq += 1;
                    if (i == 1) == up_first {
                        dive = Some(child);
                    } else {
                        heap.push(child);
                    }
                }
            }
        }
    }
    let status = if limit_hit {
        let best_open = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
        match &incumbent {
            Some(_) if cutoff(&incumbent, best_open) => SolveStatus::Optimal,
            Some(_) => SolveStatus::Feasible,
            None => SolveStatus::Limit,
        }
    } else if incumbent.is_some() {
        SolveStatus::Optimal
    } else {
        SolveStatus::Infeasible
    };
    Ok(finish(incumbent, status, nodes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::model::{LinExpr, VarKind};

    #[test]
    fn pure_lp_needs_one_node() {
        let mut m = MilpModel::new("lp");
        let x = m.add_var("x", VarKind::Continuous, 0.0, 10.0);
        let y = m.add_var("y", VarKind::Continuous, 0.0, 10.0);
        m.add_row("c", &LinExpr::var(x).add(y, 2.0), Sense::Ge, 3.0, None);
        m.set_objective(&LinExpr::var(x).add(y, 1.0));
        let s = solve_bnb(&m, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.nodes, 1);
        assert!((s.objective - 1.5).abs() < 1e-9);
    }

    #[test]
    fn symmetric_binaries_pick_lower_index() {
        let mut m = MilpModel::new("sym");
        let x = m.add_var("x", VarKind::Binary, 0.0, 1.0);
        let y = m.add_var("y", VarKind::Binary, 0.0, 1.0);
        m.add_row("c", &LinExpr::var(x).add(y, 1.0), Sense::Le, 1.0, None);
        m.set_objective(&LinExpr::var(x).add(y, 1.0).scaled(-1.0));
        // Brute force over the four points.
        let best = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
            .iter()
            .filter(|(a, b)| a + b <= 1.0)
            .map(|(a, b)| -a - b)
            .fold(f64::INFINITY, f64::min);
        let s = solve_bnb(&m, &SolveOptions::default()).unwrap();
        assert_eq!(s.objective, best);
        let again = solve_bnb(&m, &SolveOptions::default()).unwrap();
        assert_eq!(s.values, again.values);
        assert_eq!(s.values[x] + s.values[y], 1.0);
    }

    #[test]
    fn knapsack_matches_enumeration() {
        let w = [5.0, 7.0, 3.0, 9.0, 4.0, 6.0];
        let v = [8.0, 11.0, 4.0, 13.0, 6.0, 9.0];
        let mut m = MilpModel::new("knap");
        let xs: Vec<usize> = (0..6).map(|i| m.add_var(format!("x{i}"), VarKind::Binary, 0.0, 1.0)).collect();
        let mut cap = LinExpr::new();
        let mut obj = LinExpr::new();
        for i in 0..6 {
            cap = cap.add(xs[i], w[i]);
            obj = obj.add(xs[i], -v[i]);
        }
        m.add_row("cap", &cap, Sense::Le, 17.0, None);
        m.set_objective(&obj);
        let mut best = 0.0f64;
        for mask in 0..64u32 {
            let (mut tw, mut tv) = (0.0, 0.0);
            for i in 0..6 {
                if mask >> i & 1 == 1 {
                    tw += w[i];
                    tv += v[i];
                }
            }
            if tw <= 17.0 {
                best = best.max(tv);
            }
        }
        let s = solve_bnb(&m, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.objective, -best);
    }

    #[test]
    fn infeasible_and_limits() {
        let mut m = MilpModel::new("inf");
        let x = m.add_var("x", VarKind::Integer, 0.0, 10.0);
        m.add_row("a", &LinExpr::var(x).scaled(2.0), Sense::Eq, 3.0, None);
        assert_eq!(solve_bnb(&m, &SolveOptions::default()).unwrap().status, SolveStatus::Infeasible);
        let mut m = MilpModel::new("lim");
        let xs: Vec<usize> = (0..8).map(|i| m.add_var(format!("x{i}"), VarKind::Integer, 0.0, 5.0)).collect();
        let mut e = LinExpr::new();
        for &x in &xs {
            e = e.add(x, 2.0);
        }
        m.add_row("odd", &e, Sense::Eq, 15.0, None);
        let s = solve_bnb(&m, &SolveOptions { node_limit: 3, ..Default::default() }).unwrap();
        assert!(matches!(s.status, SolveStatus::Limit | SolveStatus::Infeasible));
    }

    #[test]
    fn solution_json_round_trip() {
        let mut m = MilpModel::new("j");
        let x = m.add_var("x", VarKind::Integer, 0.0, 4.0);
        m.add_row("c", &LinExpr::var(x), Sense::Ge, 2.5, None);
        m.set_objective(&LinExpr::var(x));
        let s = solve_bnb(&m, &SolveOptions::default()).unwrap();
        assert_eq!(s.values, vec![3.0]);
        let text = s.to_json(&m);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["status"], "optimal");
        assert_eq!(v["values"]["x"], 3.0);
        let back = Solution::from_json(&text, &m).unwrap();
        assert_eq!(back.values, s.values);
        assert_eq!(back.objective, 3.0);
    }
}
