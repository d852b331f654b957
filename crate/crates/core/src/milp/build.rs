//! Assembles the signal-control MILP over a window of coarse intervals.

use super::atlas::{Names, Symbol, VariableAtlas};
use super::model::{LinExpr, MilpModel, Sense, VarKind};
use crate::error::{invalid, Error, Result};
use crate::fcfs::Indicator;
use crate::network::{Level, NetworkModel, Node, SpeedLevelTable};
use crate::plan::SignalPlan;
use crate::scenario::{DemandTime, MergeMode, ScenarioConfig};
use crate::signal::{floor_count, green_run, level_f64};
use crate::sim::{SimState, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    /// M in f ≤ M·θ. Defaults to one more than the largest capacity.
    pub big_m: Option<f64>,
    /// Skip the M > max capacity check (fault injection only).
    pub unchecked_big_m: bool,
    /// Emit C⁰ ≥ ψ¹ alongside C⁰ ≤ (M_C − 1)ψ¹.
    pub occupancy_lower_bound: bool,
    /// Fix every θ in the window to this plan (absolute interval indices).
    pub fixed_plan: Option<SignalPlan>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { big_m: None, unchecked_big_m: false, occupancy_lower_bound: true, fixed_plan: None }
    }
}

/// Built model with its symbol map and window geometry.
#[derive(Debug, Clone)]
pub struct MilpBuild {
    pub model: MilpModel,
    pub atlas: VariableAtlas,
    /// First absolute interval of the window.
    pub k0: usize,
    pub n: usize,
    pub m: usize,
    /// Stand-in for an empty indicator, (k0 + n)·m + 1.
    pub sentinel: u32,
    pub big_m: f64,
}

impl MilpBuild {
    pub fn var(&self, sym: Symbol) -> Option<usize> {
        self.atlas.get(&sym)
    }

    /// Stage sequence of the window read off a solution.
    pub fn plan_from_solution(&self, net: &NetworkModel, x: &[f64]) -> Vec<Vec<usize>> {
        net.signalized
            .iter()
            .enumerate()
            .map(|(j, sj)| {
                (0..self.n)
                    .map(|k| {
                        (0..sj.stages.len())
                            .max_by(|&a, &b| {
                                let va = self.var(Symbol::Stage { node: j, stage: a, k }).map(|v| x[v]).unwrap_or(0.0);
                                let vb = self.var(Symbol::Stage { node: j, stage: b, k }).map(|v| x[v]).unwrap_or(0.0);
                                va.partial_cmp(&vb).unwrap().then(b.cmp(&a))
                            })
                            .unwrap_or(0)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Demand arriving at a segmented entry link at absolute fine step t.
pub(crate) fn fine_demand(sc: &ScenarioConfig, link: usize, t: usize) -> u64 {
    let m = sc.m();
    sc.demand
        .iter()
        .filter(|d| d.link == link)
        .filter(|d| match d.when {
            DemandTime::Interval(k) => t % m == 0 && k == t / m,
            DemandTime::FineStep(s) => s == t,
        })
        .map(|d| d.count as u64)
        .sum()
}

struct Builder<'a> {
    net: &'a NetworkModel,
    sc: &'a ScenarioConfig,
    state: &'a SimState,
    history: &'a SignalPlan,
    opts: &'a BuildOptions,
    k0: usize,
    n: usize,
    m: usize,
    sentinel: f64,
    big_m: f64,
    model: MilpModel,
    atlas: VariableAtlas,
    names: NameTable,
    inbound: Vec<Vec<usize>>,
}

struct NameTable {
    links: Vec<String>,
    streams: Vec<String>,
    sig: Vec<String>,
    non: Vec<String>,
    stages: Vec<Vec<String>>,
}

impl NameTable {
    fn view(&self) -> Names<'_> {
        Names { links: &self.links, streams: &self.streams, nodes_sig: &self.sig, nodes_non: &self.non, stages: &self.stages }
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

impl<'a> Builder<'a> {
    fn names(&self) -> Names<'_> {
        self.names.view()
    }

    fn declare(&mut self, sym: Symbol, kind: VarKind, lo: f64, hi: f64) -> Result<usize> {
        let name = sym.name(&self.names());
        let v = self.model.add_var(name, kind, lo, hi);
        self.atlas.insert(sym, v)?;
        Ok(v)
    }

    fn fixed(&mut self, sym: Symbol, kind: VarKind, value: f64) -> Result<usize> {
        self.declare(sym, kind, value, value)
    }

    fn v(&self, sym: Symbol) -> usize {
        self.atlas
            .get(&sym)
            .unwrap_or_else(|| panic!("symbol {sym} used before declaration"))
    }

    fn x(&self, sym: Symbol) -> LinExpr {
        LinExpr::var(self.v(sym))
    }

    fn row(&mut self, name: String, e: &LinExpr, sense: Sense, rhs: f64) {
        self.model.add_row(name, e, sense, rhs, None);
    }

    fn row_m(&mut self, name: String, e: &LinExpr, sense: Sense, rhs: f64, m: f64) {
        self.model.add_row(name, e, sense, rhs, Some(m));
    }

    fn shift_cap(&self, link: usize) -> u32 {
        floor_count(self.net.links[link].discharge(self.sc.lambda_s))
    }

    /// θ_w(k) for an absolute interval: history before the window, the
    /// window's variable inside it, the last window stage after it.
    fn theta(&self, j: usize, w: usize, k: isize) -> LinExpr {
        let k0 = self.k0 as isize;
        if k < k0 {
            return LinExpr::constant(if self.history.theta(j, w, k) { 1.0 } else { 0.0 });
        }
        let local = ((k - k0) as usize).min(self.n - 1);
        self.x(Symbol::Stage { node: j, stage: w, k: local })
    }

    /// Outflow s_i(k) of a link over local interval k.
    fn s_coarse(&self, i: usize, k: usize) -> LinExpr {
        let l = &self.net.links[i];
        if l.is_fine() {
            let mut e = LinExpr::new();
            for t in k * self.m..(k + 1) * self.m {
                for &s in self.net.out_streams(i) {
                    e = e.add(self.v(Symbol::Boundary { stream: s, t }), 1.0);
                }
            }
            e
        } else if l.is_exit() {
            self.x(Symbol::Exit { link: i, k })
        } else {
            let mut e = LinExpr::new();
            for &s in self.net.out_streams(i) {
                e = e.add(self.v(Symbol::Flow { stream: s, k }), 1.0);
            }
            e
        }
    }

    /// Outflow of segment j of a segmented link during fine step t.
    fn seg_out(&self, i: usize, j: usize, t: usize) -> LinExpr {
        if j == 0 {
            let mut e = LinExpr::new();
            for &s in self.net.out_streams(i) {
                e = e.add(self.v(Symbol::Boundary { stream: s, t }), 1.0);
            }
            e
        } else {
            self.x(Symbol::Shift { link: i, seg: j, t })
        }
    }

    /// Signalized arrivals into a segmented link's buffer at fine step t.
    fn arrivals(&self, i: usize, t: usize) -> LinExpr {
        let mut e = LinExpr::new();
        if t % self.m == 0 && self.net.links[i].upstream != Node::Boundary {
            if let Node::Signalized(_) = self.net.links[i].upstream {
                for &s in self.net.in_streams(i) {
                    e = e.add(self.v(Symbol::Flow { stream: s, k: t / self.m }), 1.0);
                }
            }
        }
        e
    }

    fn has_buffer(&self, i: usize) -> bool {
        self.net.links[i].is_fine() && matches!(self.net.links[i].upstream, Node::Signalized(_))
    }

    fn stream_has_junior(&self, s: usize) -> bool {
        let to = self.net.streams[s].to;
        let pos = self.inbound[to].iter().position(|&x| x == s);
        matches!(pos, Some(p) if p + 1 < self.inbound[to].len())
    }

    // -- variables ---------------------------------------------------------

    fn declare_all(&mut self) -> Result<()> {
        let net = self.net;
        let (n, m) = (self.n, self.m);
        let total_demand = self.sc.total_demand() as f64 + self.state.queues.iter().sum::<u64>() as f64;

        for k in 0..=n {
            for (i, l) in net.links.iter().enumerate() {
                let sym = Symbol::Volume { link: i, k };
                if k == 0 {
                    self.fixed(sym, VarKind::Integer, self.state.volumes[i] as f64)?;
                } else {
                    self.declare(sym, VarKind::Integer, 0.0, l.holding_capacity() as f64)?;
                }
            }
        }
        for k in 0..n {
            let abs = self.k0 + k;
            for (j, sj) in net.signalized.iter().enumerate() {
                let fixed = match &self.opts.fixed_plan {
                    Some(p) => p.stage(j, abs as isize),
                    None if abs < self.history.stages.get(j).map_or(0, |s| s.len()) => {
                        self.history.stage(j, abs as isize)
                    }
                    None => None,
                };
                for w in 0..sj.stages.len() {
                    let sym = Symbol::Stage { node: j, stage: w, k };
                    match fixed {
                        Some(f) => self.fixed(sym, VarKind::Binary, if f == w { 1.0 } else { 0.0 })?,
                        None => self.declare(sym, VarKind::Binary, 0.0, 1.0)?,
                    };
                }
            }
            for (s, st) in net.streams.iter().enumerate() {
                if !matches!(st.node, Node::Signalized(_)) {
                    continue;
                }
                let cap = net.links[st.from].holding_capacity() as f64;
                let staged = net.stream_stage(s).is_some();
                self.declare(Symbol::Flow { stream: s, k }, VarKind::Integer, 0.0, if staged { cap } else { 0.0 })?;
                if let Some(t) = &st.levels {
                    for p in 0..=t.memory_depth() {
                        self.declare(Symbol::SpeedSel { stream: s, p, k }, VarKind::Binary, 0.0, 1.0)?;
                    }
                    self.declare(Symbol::SpeedLevel { stream: s, k }, VarKind::Continuous, 0.0, 1.0)?;
                }
                if self.sc.merge_mode == MergeMode::Strict && self.stream_has_junior(s) {
                    self.declare(Symbol::PriorityOn { stream: s, k }, VarKind::Binary, 0.0, 1.0)?;
                }
            }
            for (i, l) in net.links.iter().enumerate() {
                if l.is_fine() {
                    continue;
                }
                if l.is_exit() {
                    let cap = floor_count(l.discharge(self.sc.delta_s)) as f64;
                    self.declare(Symbol::Exit { link: i, k }, VarKind::Integer, 0.0, cap.min(l.capacity as f64))?;
                }
                if l.is_entry() {
                    self.declare(Symbol::Inject { link: i, k }, VarKind::Integer, 0.0, l.capacity as f64)?;
                    self.declare(Symbol::InjectSide { link: i, k }, VarKind::Binary, 0.0, 1.0)?;
                }
            }
        }
        for k in 0..=n {
            for (i, l) in net.links.iter().enumerate() {
                if l.is_entry() && !l.is_fine() {
                    let sym = Symbol::Queue { link: i, k };
                    if k == 0 {
                        self.fixed(sym, VarKind::Integer, self.state.queues[i] as f64)?;
                    } else {
                        self.declare(sym, VarKind::Integer, 0.0, total_demand)?;
                    }
                }
            }
        }

        let tn = n * m;
        for t in 0..=tn {
            for (i, l) in net.links.iter().enumerate() {
                if !l.is_fine() {
                    continue;
                }
                for j in 0..l.segment_count {
                    let sym = Symbol::Segment { link: i, seg: j, t };
                    if t == 0 {
                        self.fixed(sym, VarKind::Integer, self.state.segments[i][j] as f64)?;
                    } else {
                        self.declare(sym, VarKind::Integer, 0.0, l.segment_capacities[j] as f64)?;
                    }
                }
                if self.has_buffer(i) {
                    let sym = Symbol::Buffer { link: i, t };
                    if t == 0 {
                        self.fixed(sym, VarKind::Integer, self.state.buffers[i] as f64)?;
                    } else {
                        self.declare(sym, VarKind::Integer, 0.0, l.holding_capacity() as f64)?;
                    }
                }
                if l.is_entry() {
                    let sym = Symbol::FineQueue { link: i, t };
                    if t == 0 {
                        self.fixed(sym, VarKind::Integer, self.state.queues[i] as f64)?;
                    } else {
                        self.declare(sym, VarKind::Integer, 0.0, total_demand)?;
                    }
                }
            }
        }
        for t in 0..tn {
            for (i, l) in net.links.iter().enumerate() {
                if !l.is_fine() {
                    continue;
                }
                let cap = self.shift_cap(i) as f64;
                for j in 1..l.segment_count {
                    self.declare(Symbol::Shift { link: i, seg: j, t }, VarKind::Integer, 0.0, cap)?;
                }
                if self.has_buffer(i) {
                    self.declare(Symbol::Release { link: i, t }, VarKind::Integer, 0.0, cap)?;
                }
                if l.is_entry() {
                    let far = l.segment_capacities[l.segment_count - 1] as f64;
                    self.declare(Symbol::FineInject { link: i, t }, VarKind::Integer, 0.0, far)?;
                    self.declare(Symbol::FineInjectSide { link: i, t }, VarKind::Binary, 0.0, 1.0)?;
                }
            }
            for (s, st) in net.streams.iter().enumerate() {
                if matches!(st.node, Node::NonSignalized(_)) {
                    let cap = self.shift_cap(st.from) as f64;
                    self.declare(Symbol::Boundary { stream: s, t }, VarKind::Integer, 0.0, cap)?;
                }
            }
        }
        let mt = self.sentinel;
        for (j, x) in net.nonsignalized.iter().enumerate() {
            for g in 0..x.groups.len() {
                for t in 0..=tn {
                    let sym = Symbol::Arrival { node: j, group: g, t };
                    if t == 0 {
                        let v = self.state.indicators[j][g].value(mt as u32) as f64;
                        self.fixed(sym, VarKind::Integer, v)?;
                    } else {
                        self.declare(sym, VarKind::Integer, 0.0, mt)?;
                    }
                }
                for t in 1..=tn {
                    self.declare(Symbol::Occupied { node: j, group: g, t }, VarKind::Binary, 0.0, 1.0)?;
                    self.declare(Symbol::KeepSide { node: j, group: g, t }, VarKind::Binary, 0.0, 1.0)?;
                    self.declare(Symbol::StartSide { node: j, group: g, t }, VarKind::Binary, 0.0, 1.0)?;
                }
                for t in 0..tn {
                    for h in 0..x.groups.len() {
                        if x.group_sigma(h) < x.group_sigma(g) {
                            self.declare(Symbol::Later { node: j, group: g, other: h, t }, VarKind::Binary, 0.0, 1.0)?;
                        }
                    }
                    self.declare(Symbol::VirtualGreen { node: j, group: g, t }, VarKind::Binary, 0.0, 1.0)?;
                }
            }
        }
        Ok(())
    }

    // -- rows ----------------------------------------------------------------

    fn emit_stage_constraints(&mut self, j: usize, k: usize) -> Result<()> {
        let net = self.net;
        let sj = &net.signalized[j];
        let mut one = LinExpr::new();
        for w in 0..sj.stages.len() {
            one = one.add(self.v(Symbol::Stage { node: j, stage: w, k }), 1.0);
        }
        self.row(format!("onehot({},{k})", self.names.sig[j]), &one, Sense::Eq, 1.0);
        for (w, stage) in sj.stages.iter().enumerate() {
            for &s in &stage.streams {
                let e = self.x(Symbol::Flow { stream: s, k }).add(self.v(Symbol::Stage { node: j, stage: w, k }), -self.big_m);
                self.row_m(format!("gate({},{k})", self.names.streams[s]), &e, Sense::Le, 0.0, self.big_m);
            }
        }
        Ok(())
    }

    fn emit_speed_constraints(&mut self, s: usize, k: usize, table: &SpeedLevelTable) {
        let Some((j, w)) = self.net.stream_stage(s) else { return };
        let abs = (self.k0 + k) as isize;
        let thetas: Vec<LinExpr> = (0..table.memory_depth() + 3)
            .map(|p| self.theta(j, w, abs + 1 - p as isize))
            .collect();
        // thetas[0] = θ(k+1), thetas[1 + p] = θ(k − p).
        let delta: Vec<usize> = (0..=table.memory_depth())
            .map(|p| self.v(Symbol::SpeedSel { stream: s, p, k }))
            .collect();
        let level = self.v(Symbol::SpeedLevel { stream: s, k });
        let prev = if k == 0 {
            LinExpr::constant(level_f64(&self.state.levels[s]))
        } else {
            self.x(Symbol::SpeedLevel { stream: s, k: k - 1 })
        };
        let tag = format!("{},{k}", self.names.streams[s]);
        let rows = speed_rows(&thetas, &delta, level, &prev, table);
        for (name, e, sense, rhs) in rows {
            self.row(format!("{name}({tag})"), &e, sense, rhs);
        }
    }

    fn emit_flow_constraints(&mut self, s: usize, k: usize) {
        let net = self.net;
        let st = &net.streams[s];
        let f = self.x(Symbol::Flow { stream: s, k });
        let tag = format!("{},{k}", self.names.streams[s]);
        let gamma = self.sc.gamma(s, self.k0 + k);
        let e = f.clone().add(self.v(Symbol::Volume { link: st.from, k }), -gamma);
        self.row(format!("share({tag})"), &e, Sense::Le, 0.0);
        if st.levels.is_some() {
            let cap = net.links[st.from].discharge(self.sc.delta_s);
            let e = f.clone().add(self.v(Symbol::SpeedLevel { stream: s, k }), -cap);
            self.row(format!("speed({tag})"), &e, Sense::Le, 0.0);
        }
        let e = f.plus(&self.room_used(st.to, k), 1.0);
        self.row(format!("room({tag})"), &e, Sense::Le, self.room_cap(st.to));
    }

    /// Receiver occupancy term: C_j(k) − s_j(k) for coarse receivers, C_j(k)
    /// for segmented ones.
    fn room_used(&self, j: usize, k: usize) -> LinExpr {
        let vol = self.x(Symbol::Volume { link: j, k });
        if self.net.links[j].is_fine() {
            vol
        } else {
            vol.plus(&self.s_coarse(j, k), -1.0)
        }
    }

    fn room_cap(&self, j: usize) -> f64 {
        let l = &self.net.links[j];
        if l.is_fine() {
            l.holding_capacity() as f64
        } else {
            l.capacity as f64
        }
    }

    fn emit_merge_constraints(&mut self, j: usize, k: usize) -> Result<()> {
        let order = self.inbound[j].clone();
        if order.len() < 2 {
            return Ok(());
        }
        for p in 1..order.len() {
            let (a, b) = (self.net.streams[order[p - 1]].priority, self.net.streams[order[p]].priority);
            if a == b && order[p - 1] > order[p] {
                return invalid(format!("no priority relation between streams into {}", self.names.links[j]));
            }
        }
        let used = self.room_used(j, k);
        let cap = self.room_cap(j);
        for p in 1..order.len() {
            let mut e = used.clone();
            for &h in &order[..=p] {
                e = e.add(self.v(Symbol::Flow { stream: h, k }), 1.0);
            }
            self.row(format!("merge({},{k})", self.names.streams[order[p]]), &e, Sense::Le, cap);
        }
        if self.sc.merge_mode == MergeMode::Strict {
            let mm = self.big_m;
            for p in 0..order.len() - 1 {
                let h = order[p];
                let on = self.v(Symbol::PriorityOn { stream: h, k });
                let fh = self.x(Symbol::Flow { stream: h, k });
                let tag = format!("{},{k}", self.names.streams[h]);
                self.row_m(format!("prio_on({tag})"), &fh.clone().add(on, -mm), Sense::Le, 0.0, mm);
                self.row(format!("prio_min({tag})"), &fh.add(on, -1.0), Sense::Ge, 0.0);
                for &g in &order[p + 1..] {
                    let Some((jj, w)) = self.net.stream_stage(g) else { continue };
                    let e = self
                        .x(Symbol::Flow { stream: g, k })
                        .add(self.v(Symbol::Stage { node: jj, stage: w, k }), mm)
                        .add(on, mm);
                    self.row_m(
                        format!("giveway({},{},{k})", self.names.streams[g], self.names.streams[h]),
                        &e,
                        Sense::Le,
                        2.0 * mm,
                        mm,
                    );
                }
            }
        }
        Ok(())
    }

    /// e = min(a, b) exactly, with a selector binary.
    fn emit_min(&mut self, tag: String, e: usize, side: usize, a: &LinExpr, b: &LinExpr, big: f64) {
        let ex = LinExpr::var(e);
        self.row(format!("inj_a({tag})"), &ex.clone().plus(a, -1.0), Sense::Le, 0.0);
        self.row(format!("inj_b({tag})"), &ex.clone().plus(b, -1.0), Sense::Le, 0.0);
        self.row_m(format!("inj_ga({tag})"), &ex.clone().plus(a, -1.0).add(side, big), Sense::Ge, 0.0, big);
        self.row_m(format!("inj_gb({tag})"), &ex.plus(b, -1.0).add(side, -big), Sense::Ge, -big, big);
    }

    fn emit_dynamics_constraints(&mut self) -> Result<()> {
        let net = self.net;
        let (n, m) = (self.n, self.m);
        let total = self.sc.total_demand() as f64 + self.state.queues.iter().sum::<u64>() as f64;
        for k in 0..n {
            let abs = self.k0 + k;
            for (i, l) in net.links.iter().enumerate() {
                let tag = format!("{},{k}", self.names.links[i]);
                if l.is_exit() && !l.is_fine() {
                    let e = self.x(Symbol::Exit { link: i, k }).add(self.v(Symbol::Volume { link: i, k }), -1.0);
                    self.row(format!("exit({tag})"), &e, Sense::Le, 0.0);
                }
                if l.is_fine() {
                    continue;
                }
                let mut inflow = LinExpr::new();
                for &s in net.in_streams(i) {
                    match net.streams[s].node {
                        Node::Signalized(_) => inflow = inflow.add(self.v(Symbol::Flow { stream: s, k }), 1.0),
                        _ => {
                            for t in k * m..(k + 1) * m {
                                inflow = inflow.add(self.v(Symbol::Boundary { stream: s, t }), 1.0);
                            }
                        }
                    }
                }
                if l.is_entry() {
                    let d = self.sc.demand_in_interval(i, abs) as f64;
                    let q = self.x(Symbol::Queue { link: i, k });
                    let a = q.plus_const(d);
                    let b = LinExpr::constant(l.capacity as f64).plus(&self.room_used(i, k), -1.0).plus(&inflow, -1.0);
                    let e = self.v(Symbol::Inject { link: i, k });
                    let side = self.v(Symbol::InjectSide { link: i, k });
                    self.emit_min(tag.clone(), e, side, &a, &b, total + l.capacity as f64 + 1.0);
                    let qn = self.x(Symbol::Queue { link: i, k: k + 1 }).plus(&a, -1.0).add(e, 1.0);
                    self.row(format!("queue({tag})"), &qn, Sense::Eq, 0.0);
                    inflow = inflow.add(e, 1.0);
                }
                let e = self
                    .x(Symbol::Volume { link: i, k: k + 1 })
                    .add(self.v(Symbol::Volume { link: i, k }), -1.0)
                    .plus(&inflow, -1.0)
                    .plus(&self.s_coarse(i, k), 1.0);
                self.row(format!("cons({tag})"), &e, Sense::Eq, 0.0);
            }
        }
        // Segment volumes aggregate into C_i(k) at every interval boundary.
        for k in 1..=n {
            for (i, l) in net.links.iter().enumerate() {
                if !l.is_fine() {
                    continue;
                }
                let mut e = self.x(Symbol::Volume { link: i, k });
                for j in 0..l.segment_count {
                    e = e.add(self.v(Symbol::Segment { link: i, seg: j, t: k * m }), -1.0);
                }
                if self.has_buffer(i) {
                    e = e.add(self.v(Symbol::Buffer { link: i, t: k * m }), -1.0);
                }
                self.row(format!("agg({},{k})", self.names.links[i]), &e, Sense::Eq, 0.0);
            }
        }
        for t in 0..n * m {
            let k = t / m;
            let abs_t = self.k0 * m + t;
            for (i, l) in net.links.iter().enumerate() {
                if !l.is_fine() {
                    continue;
                }
                let tag = format!("{},{t}", self.names.links[i]);
                let nseg = l.segment_count;
                let far = nseg - 1;
                for j in 1..nseg {
                    let f = self.x(Symbol::Shift { link: i, seg: j, t });
                    let e = f.clone().add(self.v(Symbol::Segment { link: i, seg: j, t }), -1.0);
                    self.row(format!("shift_src({},{j},{t})", self.names.links[i]), &e, Sense::Le, 0.0);
                    let e = f
                        .add(self.v(Symbol::Segment { link: i, seg: j - 1, t }), 1.0)
                        .plus(&self.seg_out(i, j - 1, t), -1.0);
                    self.row(
                        format!("shift_room({},{j},{t})", self.names.links[i]),
                        &e,
                        Sense::Le,
                        l.segment_capacities[j - 1] as f64,
                    );
                }
                let far_room = self.x(Symbol::Segment { link: i, seg: far, t }).plus(&self.seg_out(i, far, t), -1.0);
                let mut far_in = LinExpr::new();
                if self.has_buffer(i) {
                    let b = self.v(Symbol::Release { link: i, t });
                    let arr = self.arrivals(i, t);
                    let e = LinExpr::var(b).add(self.v(Symbol::Buffer { link: i, t }), -1.0).plus(&arr, -1.0);
                    self.row(format!("rel_src({tag})"), &e, Sense::Le, 0.0);
                    let e = LinExpr::var(b).plus(&far_room, 1.0);
                    self.row(format!("rel_room({tag})"), &e, Sense::Le, l.segment_capacities[far] as f64);
                    let e = self
                        .x(Symbol::Buffer { link: i, t: t + 1 })
                        .add(self.v(Symbol::Buffer { link: i, t }), -1.0)
                        .plus(&arr, -1.0)
                        .add(b, 1.0);
                    self.row(format!("buf({tag})"), &e, Sense::Eq, 0.0);
                    far_in = far_in.add(b, 1.0);
                }
                if let Node::NonSignalized(_) = l.upstream {
                    let mut e = LinExpr::new();
                    for &s in net.in_streams(i) {
                        e = e.add(self.v(Symbol::Boundary { stream: s, t }), 1.0);
                    }
                    let room = e.clone().plus(&far_room, 1.0);
                    self.row(format!("bnd_room({tag})"), &room, Sense::Le, l.segment_capacities[far] as f64);
                    far_in = far_in.plus(&e, 1.0);
                }
                if l.is_entry() {
                    let d = fine_demand(self.sc, i, abs_t) as f64;
                    let a = self.x(Symbol::FineQueue { link: i, t }).plus_const(d);
                    let b = LinExpr::constant(l.segment_capacities[far] as f64).plus(&far_room, -1.0);
                    let e = self.v(Symbol::FineInject { link: i, t });
                    let side = self.v(Symbol::FineInjectSide { link: i, t });
                    self.emit_min(tag.clone(), e, side, &a, &b, total + l.segment_capacities[far] as f64 + 1.0);
                    let qn = self.x(Symbol::FineQueue { link: i, t: t + 1 }).plus(&a, -1.0).add(e, 1.0);
                    self.row(format!("fqueue({tag})"), &qn, Sense::Eq, 0.0);
                    far_in = far_in.add(e, 1.0);
                }
                for j in 0..nseg {
                    let inflow = if j < far { self.x(Symbol::Shift { link: i, seg: j + 1, t }) } else { far_in.clone() };
                    let e = self
                        .x(Symbol::Segment { link: i, seg: j, t: t + 1 })
                        .add(self.v(Symbol::Segment { link: i, seg: j, t }), -1.0)
                        .plus(&inflow, -1.0)
                        .plus(&self.seg_out(i, j, t), 1.0);
                    self.row(format!("segc({},{j},{t})", self.names.links[i]), &e, Sense::Eq, 0.0);
                }
            }
            // Boundary flows into coarse receivers: cumulative room over the interval.
            for (p, lp) in net.links.iter().enumerate() {
                if lp.is_fine() || !matches!(lp.upstream, Node::NonSignalized(_)) {
                    continue;
                }
                let mut e = self.room_used(p, k);
                for tt in k * m..=t {
                    for &s in net.in_streams(p) {
                        e = e.add(self.v(Symbol::Boundary { stream: s, t: tt }), 1.0);
                    }
                }
                self.row(format!("acc_room({},{t})", self.names.links[p]), &e, Sense::Le, lp.capacity as f64);
            }
        }
        Ok(())
    }

    fn emit_fcfs_constraints(&mut self, j: usize, t: usize) -> Result<()> {
        let net = self.net;
        let x = &net.nonsignalized[j];
        let groups = x.groups.len();
        let mt = self.sentinel;
        let eps = 1.0;
        let node = self.names.non[j].clone();
        let abs_t = (self.k0 * self.m + t) as f64;

        // Occupancy and indicator update at t (for t ≥ 1).
        if t >= 1 {
            for g in 0..groups {
                let tag = format!("{node},{g},{t}");
                let mut c0 = LinExpr::new();
                let mut mc = 0.0;
                for &i in &x.groups[g] {
                    c0 = c0.add(self.v(Symbol::Segment { link: i, seg: 0, t }), 1.0);
                    mc += net.links[i].segment_capacities[0] as f64;
                }
                let psi1 = self.v(Symbol::Occupied { node: j, group: g, t });
                self.row_m(format!("occ_hi({tag})"), &c0.clone().add(psi1, -mc), Sense::Le, 0.0, mc + 1.0);
                if self.opts.occupancy_lower_bound {
                    self.row(format!("occ_lo({tag})"), &c0.add(psi1, -1.0), Sense::Ge, 0.0);
                }
                let prev_t = self.v(Symbol::Arrival { node: j, group: g, t: t - 1 });
                let prev_bounds = {
                    let v = &self.model.variables[prev_t];
                    (v.lower, v.upper)
                };
                let psi4 = linearize_product(
                    &mut self.model,
                    &mut self.atlas,
                    Symbol::ProdArrival { node: j, group: g, t },
                    &self.names.view(),
                    psi1,
                    &LinExpr::var(prev_t),
                    prev_bounds,
                )?;
                let psi5 = linearize_product(
                    &mut self.model,
                    &mut self.atlas,
                    Symbol::ProdTime { node: j, group: g, t },
                    &self.names.view(),
                    psi1,
                    &LinExpr::constant(abs_t),
                    (abs_t, abs_t),
                )?;
                let tv = self.v(Symbol::Arrival { node: j, group: g, t });
                // E = T(t) − M_T(1 − ψ¹) − ψ⁴ (resp. ψ⁵).
                for (label, prod, side) in [
                    ("keep", psi4, Symbol::KeepSide { node: j, group: g, t }),
                    ("start", psi5, Symbol::StartSide { node: j, group: g, t }),
                ] {
                    let e = LinExpr::var(tv).add(psi1, mt).add(prod, -1.0).plus_const(-mt);
                    self.row_m(format!("ind_{label}_ub({tag})"), &e, Sense::Le, 0.0, mt);
                    let sv = self.v(side);
                    let m_t = -mt;
                    self.row_m(format!("ind_{label}_ge({tag})"), &e.clone().add(sv, m_t), Sense::Ge, m_t, mt);
                    self.row_m(
                        format!("ind_{label}_lt({tag})"),
                        &e.add(sv, -(mt + eps)),
                        Sense::Le,
                        -eps,
                        mt + eps,
                    );
                }
                let e = self
                    .x(Symbol::KeepSide { node: j, group: g, t })
                    .add(self.v(Symbol::StartSide { node: j, group: g, t }), 1.0);
                self.row(format!("ind_or({tag})"), &e, Sense::Ge, 1.0);
            }
        }

        if t >= self.n * self.m {
            return Ok(());
        }
        // Pairwise order and virtual green at t.
        let m_t = -mt;
        for g in 0..groups {
            for h in 0..groups {
                if x.group_sigma(h) >= x.group_sigma(g) {
                    continue;
                }
                let psi = self.v(Symbol::Later { node: j, group: g, other: h, t });
                let diff = self
                    .x(Symbol::Arrival { node: j, group: g, t })
                    .add(self.v(Symbol::Arrival { node: j, group: h, t }), -1.0);
                let tag = format!("{node},{g},{h},{t}");
                self.row_m(format!("later_ge({tag})"), &diff.clone().add(psi, m_t), Sense::Ge, m_t, mt);
                self.row_m(format!("later_lt({tag})"), &diff.add(psi, -(mt + eps)), Sense::Le, -eps, mt + eps);
            }
        }
        let mut one = LinExpr::new();
        for g in 0..groups {
            let th = self.v(Symbol::VirtualGreen { node: j, group: g, t });
            one = one.add(th, 1.0);
            let mut wins = LinExpr::new();
            for h in 0..groups {
                if h == g {
                    continue;
                }
                // w = 1 when g precedes h in (T, σ) order.
                let w = if x.group_sigma(h) < x.group_sigma(g) {
                    LinExpr::constant(1.0).add(self.v(Symbol::Later { node: j, group: g, other: h, t }), -1.0)
                } else {
                    self.x(Symbol::Later { node: j, group: h, other: g, t })
                };
                self.row(format!("green_ub({node},{g},{h},{t})"), &LinExpr::var(th).plus(&w, -1.0), Sense::Le, 0.0);
                wins = wins.plus(&w, 1.0);
            }
            let e = LinExpr::var(th).plus(&wins, -1.0);
            self.row(format!("green_lb({node},{g},{t})"), &e, Sense::Ge, 2.0 - groups as f64);
        }
        self.row(format!("green_one({node},{t})"), &one, Sense::Eq, 1.0);

        // Boundary discharge of each approach in the green group.
        let k = t / self.m;
        for g in 0..groups {
            let th = self.v(Symbol::VirtualGreen { node: j, group: g, t });
            for &i in &x.groups[g] {
                let cap = self.shift_cap(i) as f64;
                let outs = net.out_streams(i).to_vec();
                let c0 = self.v(Symbol::Segment { link: i, seg: 0, t });
                let mut sum = LinExpr::new();
                for &s in &outs {
                    let b = self.v(Symbol::Boundary { stream: s, t });
                    sum = sum.add(b, 1.0);
                    let tag = format!("{},{t}", self.names.streams[s]);
                    self.row_m(format!("vgate({tag})"), &LinExpr::var(b).add(th, -cap), Sense::Le, 0.0, cap);
                    if outs.len() > 1 {
                        let gamma = self.sc.gamma(s, self.k0 + k);
                        let e = LinExpr::var(b).add(c0, -gamma);
                        self.row(format!("vshare({tag})"), &e, Sense::Le, 1.0);
                    }
                }
                let tag = format!("{},{t}", self.names.links[i]);
                self.row(format!("vsrc({tag})"), &sum.clone().add(c0, -1.0), Sense::Le, 0.0);
                self.row(format!("vcap({tag})"), &sum, Sense::Le, cap);
            }
        }
        Ok(())
    }

    fn build_objective(&mut self) {
        let expr = objective_expr(self, self.n);
        self.model.set_objective(&expr);
    }
}

fn objective_expr(b: &Builder, n: usize) -> LinExpr {
    let delta = b.sc.delta_s;
    let mut e = LinExpr::new();
    for k in 0..n {
        for (i, l) in b.net.links.iter().enumerate() {
            e = e.add(b.v(Symbol::Volume { link: i, k }), delta);
            e = e.plus(&b.s_coarse(i, k), -l.free_travel_s());
        }
    }
    e
}

/// The speed-level rows for one stream and interval.
///
/// `thetas[0]` is θ(k+1) and `thetas[1 + p]` is θ(k − p) for p = 0 … r+1.
pub fn speed_rows(
    thetas: &[LinExpr],
    delta: &[usize],
    level: usize,
    prev_level: &LinExpr,
    table: &SpeedLevelTable,
) -> Vec<(String, LinExpr, Sense, f64)> {
    let r = table.memory_depth();
    let th = |p: usize| thetas[1 + p].clone();
    let next = thetas[0].clone();
    let one = || LinExpr::constant(1.0);
    let mut rows = Vec::new();
    for q in 0..=r {
        let d = delta[r - q];
        if q < r {
            // δ^{r−q} ≤ 1 − θ(k−q−1)
            rows.push((format!("sp_a{q}"), LinExpr::var(d).plus(&th(q + 1), 1.0), Sense::Le, 1.0));
        }
        for p in 0..=q {
            rows.push((format!("sp_b{q}_{p}"), LinExpr::var(d).plus(&th(p), -1.0), Sense::Le, 0.0));
        }
        // (1 − θ(k−q−1)) + Σ_p θ(k−p) − δ^{r−q} ≤ q + 1; the run term drops at q = r.
        let mut e = LinExpr::var(d).scaled(-1.0);
        for p in 0..=q {
            e = e.plus(&th(p), 1.0);
        }
        if q < r {
            e = e.plus(&one().plus(&th(q + 1), -1.0), 1.0);
            rows.push((format!("sp_c{q}"), e, Sense::Le, (q + 1) as f64));
        } else {
            rows.push((format!("sp_c{q}"), e, Sense::Le, r as f64));
        }
    }
    let mut sum = LinExpr::new();
    for p in 0..=r {
        sum = sum.add(delta[p], 1.0);
    }
    rows.push(("sp_sum".into(), sum.clone().plus(&th(0), -1.0), Sense::Eq, 0.0));
    let mut weighted = LinExpr::new();
    for p in 0..=r {
        weighted = weighted.add(delta[p], level_f64(&table.levels[p]));
    }
    let big = (r + 1) as f64;
    let off_next = one().plus(&next, -1.0);
    let off_now = one().plus(&th(0), -1.0);
    let l = LinExpr::var(level);
    rows.push(("sp_d".into(), l.clone().plus(&weighted, -1.0).plus(&off_next, -big), Sense::Le, 0.0));
    rows.push(("sp_e".into(), l.clone().plus(&weighted, -1.0).plus(&off_next, big), Sense::Ge, 0.0));
    let half = prev_level.scaled(0.5);
    rows.push(("sp_f".into(), l.clone().plus(&half, -1.0).plus(&next, -1.0).plus(&off_now, -1.0), Sense::Le, 0.0));
    rows.push(("sp_g".into(), l.clone().plus(&half, -1.0).plus(&next, 1.0).plus(&off_now, 1.0), Sense::Ge, 0.0));
    rows.push(("sp_red".into(), l.plus(&th(0), -1.0), Sense::Le, 0.0));
    rows
}

/// Declares z = b·y for binary b and y within [lo, hi], with the four
/// linking rows. `y` may be a constant expression.
pub fn linearize_product(
    model: &mut MilpModel,
    atlas: &mut VariableAtlas,
    sym: Symbol,
    names: &Names,
    binary: usize,
    bounded: &LinExpr,
    (lo, hi): (f64, f64),
) -> Result<usize> {
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return invalid(format!("linearize_product needs finite bounds, got [{lo}, {hi}]"));
    }
    let name = sym.name(names);
    let z = model.add_var(name.clone(), VarKind::Continuous, lo.min(0.0), hi.max(0.0));
    atlas.insert(sym, z)?;
    let zb = LinExpr::var(z);
    model.add_row(format!("prod_a({name})"), &LinExpr::var(binary).scaled(lo).add(z, -1.0), Sense::Le, 0.0, None);
    model.add_row(format!("prod_b({name})"), &zb.clone().add(binary, -hi), Sense::Le, 0.0, None);
    model.add_row(
        format!("prod_c({name})"),
        &bounded.clone().add(binary, hi).add(z, -1.0),
        Sense::Le,
        hi,
        Some(hi),
    );
    model.add_row(
        format!("prod_d({name})"),
        &zb.plus(bounded, -1.0).add(binary, -lo),
        Sense::Le,
        -lo,
        Some(lo.abs()),
    );
    Ok(z)
}

/// Builds the MILP for `n` intervals starting at `state.k`.
///
/// `history` supplies θ before the window, and any stages it already holds
/// inside the window are fixed.
pub fn build_milp(
    net: &NetworkModel,
    sc: &ScenarioConfig,
    state: &SimState,
    history: &SignalPlan,
    n: usize,
    opts: &BuildOptions,
) -> Result<MilpBuild> {
    if n == 0 {
        return invalid("window must cover at least one interval");
    }
    let m = sc.fine_steps().ok_or_else(|| Error::InvalidParameter("Δ is not a multiple of λ".into()))?;
    let max_cap = net.max_capacity() as f64;
    let big_m = opts.big_m.unwrap_or(max_cap + 1.0);
    if big_m <= max_cap && !opts.unchecked_big_m {
        return invalid(format!("big-M {big_m} must exceed the largest capacity {max_cap}"));
    }
    let k0 = state.k;
    let sentinel = ((k0 + n) * m + 1) as f64;
    for ind in state.indicators.iter().flatten() {
        if let Indicator::Since(t) = ind {
            if *t as f64 >= sentinel {
                return invalid("indicator beyond the sentinel");
            }
        }
    }
    let names = NameTable {
        links: net.links.iter().map(|l| sanitize(&l.id)).collect(),
        streams: (0..net.streams.len())
            .map(|s| {
                let st = &net.streams[s];
                format!("{}~{}", sanitize(&net.links[st.from].id), sanitize(&net.links[st.to].id))
            })
            .collect(),
        sig: net.signalized.iter().map(|j| sanitize(&j.id)).collect(),
        non: net.nonsignalized.iter().map(|j| sanitize(&j.id)).collect(),
        stages: net
            .signalized
            .iter()
            .map(|j| j.stages.iter().map(|w| sanitize(&w.id)).collect())
            .collect(),
    };
    let inbound = (0..net.links.len())
        .map(|l| {
            let mut v: Vec<usize> = net
                .in_streams(l)
                .iter()
                .copied()
                .filter(|&s| matches!(net.streams[s].node, Node::Signalized(_)))
                .collect();
            v.sort_by_key(|&s| (net.streams[s].priority, s));
            v
        })
        .collect();
    let mut b = Builder {
        net,
        sc,
        state,
        history,
        opts,
        k0,
        n,
        m,
        sentinel,
        big_m,
        model: MilpModel::new("signal_control"),
        atlas: VariableAtlas::default(),
        names,
        inbound,
    };
    b.declare_all()?;
    for k in 0..n {
        for j in 0..net.signalized.len() {
            b.emit_stage_constraints(j, k)?;
        }
        for (s, st) in net.streams.iter().enumerate() {
            if !matches!(st.node, Node::Signalized(_)) {
                continue;
            }
            if let Some(t) = st.levels.clone() {
                if net.stream_stage(s).is_some() {
                    b.emit_speed_constraints(s, k, &t);
                }
            }
            b.emit_flow_constraints(s, k);
        }
        for j in 0..net.links.len() {
            b.emit_merge_constraints(j, k)?;
        }
    }
    b.emit_dynamics_constraints()?;
    for j in 0..net.nonsignalized.len() {
        for t in 0..=n * m {
            b.emit_fcfs_constraints(j, t)?;
        }
    }
    b.build_objective();
    b.model.check()?;
    Ok(MilpBuild { model: b.model, atlas: b.atlas, k0, n, m, sentinel: sentinel as u32, big_m })
}

/// Maps a simulated window onto the model's variables. `traj` must start at
/// the window's first interval and cover all `n` intervals.
pub fn assignment_from_trajectory(
    build: &MilpBuild,
    net: &NetworkModel,
    sc: &ScenarioConfig,
    start: &SimState,
    traj: &Trajectory,
) -> Result<Vec<f64>> {
    let (n, m) = (build.n, build.m);
    if traj.records.len() < n || start.k != build.k0 {
        return invalid("trajectory does not cover the model window");
    }
    let recs = &traj.records[..n];
    let fine: Vec<_> = recs.iter().flat_map(|r| r.fine.iter()).collect();
    let fin = if traj.records.len() == n {
        traj.final_state.clone()
    } else {
        return invalid("trajectory must end at the window end");
    };
    let mt = build.sentinel;
    let tn = n * m;
    let t0 = build.k0 * m;
    let indicator = |j: usize, g: usize, t: usize| -> f64 {
        if t == tn {
            fin.indicators[j][g].value(mt) as f64
        } else {
            fine[t].indicators[j][g].value(mt) as f64
        }
    };
    let segment = |i: usize, s: usize, t: usize| -> f64 {
        if t == tn {
            fin.segments[i][s] as f64
        } else {
            fine[t].segments[i][s] as f64
        }
    };
    let occ = |j: usize, g: usize, t: usize| -> f64 {
        let c: f64 = net.nonsignalized[j].groups[g].iter().map(|&i| segment(i, 0, t)).sum();
        if c > 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let plan = &traj.plan;
    let mut x = vec![0.0; build.model.variables.len()];
    for (v, sym) in build.atlas.iter() {
        use Symbol::*;
        x[v] = match *sym {
            Volume { link, k } => {
                if k == n {
                    fin.volumes[link] as f64
                } else {
                    recs[k].volumes[link] as f64
                }
            }
            Flow { stream, k } => recs[k].stream_flows[stream] as f64,
            Stage { node, stage, k } => (recs[k].stages[node] == stage) as u8 as f64,
            SpeedSel { stream, p, k } => {
                let (j, w) = net.stream_stage(stream).unwrap();
                let r = net.streams[stream].levels.as_ref().unwrap().memory_depth();
                let abs = (build.k0 + k) as isize;
                let hist: Vec<bool> = (0..r + 2).map(|q| plan.theta(j, w, abs - (r + 1) as isize + q as isize)).collect();
                match green_run(&hist, r) {
                    Some(q) if r - q == p => 1.0,
                    _ => 0.0,
                }
            }
            SpeedLevel { stream, k } => level_f64(&recs[k].levels[stream]),
            PriorityOn { stream, k } => (recs[k].stream_flows[stream] > 0) as u8 as f64,
            Exit { link, k } => recs[k].outflow[link] as f64,
            Queue { link, k } => {
                if k == n {
                    fin.queues[link] as f64
                } else {
                    recs[k].queues[link] as f64
                }
            }
            Inject { link, k } => recs[k].injected[link] as f64,
            InjectSide { link, k } => {
                let a = recs[k].queues[link] as f64 + sc.demand_in_interval(link, build.k0 + k) as f64;
                ((recs[k].injected[link] as f64) < a) as u8 as f64
            }
            Segment { link, seg, t } => segment(link, seg, t),
            Buffer { link, t } => {
                if t == tn {
                    fin.buffers[link] as f64
                } else {
                    fine[t].buffers[link] as f64
                }
            }
            Shift { link, seg, t } => fine[t].shifts[link][seg - 1] as f64,
            Release { link, t } => fine[t].releases[link] as f64,
            Boundary { stream, t } => fine[t].boundary[stream] as f64,
            FineQueue { link, t } => {
                if t == tn {
                    fin.queues[link] as f64
                } else {
                    fine[t].queues[link] as f64
                }
            }
            FineInject { link, t } => fine[t].injected[link] as f64,
            FineInjectSide { link, t } => {
                let a = fine[t].queues[link] as f64 + fine_demand(sc, link, t0 + t) as f64;
                ((fine[t].injected[link] as f64) < a) as u8 as f64
            }
            Arrival { node, group, t } => indicator(node, group, t),
            Occupied { node, group, t } => occ(node, group, t),
            KeepSide { node, group, t } => {
                let p1 = occ(node, group, t);
                let e = indicator(node, group, t) - mt as f64 * (1.0 - p1) - p1 * indicator(node, group, t - 1);
                (e >= 0.0) as u8 as f64
            }
            StartSide { node, group, t } => {
                let p1 = occ(node, group, t);
                let e = indicator(node, group, t) - mt as f64 * (1.0 - p1) - p1 * (t0 + t) as f64;
                (e >= 0.0) as u8 as f64
            }
            ProdArrival { node, group, t } => occ(node, group, t) * indicator(node, group, t - 1),
            ProdTime { node, group, t } => occ(node, group, t) * (t0 + t) as f64,
            Later { node, group, other, t } => (indicator(node, group, t) >= indicator(node, other, t)) as u8 as f64,
            VirtualGreen { node, group, t } => (fine[t].greens[node] == group) as u8 as f64,
        };
    }
    Ok(x)
}

/// Reads the per-stream level of a stored rational, for reports.
pub fn level_value(l: &Level) -> f64 {
    level_f64(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;
    use crate::scenario::tests::TWO_INTERSECTIONS;
    use crate::sim::Simulator;

    fn all_plans(stages: usize, n: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p: Vec<usize>| {
                    (0..stages).map(move |w| {
                        let mut q = p.clone();
                        q.push(w);
                        q
                    })
                })
                .collect();
        }
        out
    }

    fn assert_feasible(net: &NetworkModel, sc: &ScenarioConfig, plan: &SignalPlan, k0: usize, n: usize) {
        let sim = Simulator::new(net, sc).unwrap();
        let pre = sim.run(plan, k0).unwrap();
        let state = pre.final_state.clone();
        let window = sim.run_from(state.clone(), plan, n).unwrap();
        let opts = BuildOptions { fixed_plan: Some(plan.clone()), ..Default::default() };
        let b = build_milp(net, sc, &state, plan, n, &opts).unwrap();
        let x = assignment_from_trajectory(&b, net, sc, &state, &window).unwrap();
        let v = b.model.violations(&x, 1e-9);
        assert!(v.is_empty(), "plan {:?} k0 {k0}: {:?}", plan.stages, &v[..v.len().min(5)]);
        let delay: f64 = window.records.iter().flat_map(|r| r.delay.iter()).sum();
        assert!((b.model.objective_value(&x) - delay).abs() < 1e-6);
    }

    #[test]
    fn simulated_window_satisfies_every_row() {
        let (net, sc) = parse_scenario(TWO_INTERSECTIONS).unwrap();
        for p in all_plans(2, 4) {
            let plan = SignalPlan::new(vec![p]);
            assert_feasible(&net, &sc, &plan, 0, 4);
            assert_feasible(&net, &sc, &plan, 1, 3);
        }
    }

    #[test]
    fn awsc_window_satisfies_every_row() {
        let text = r#"{
            "links": [
                {"id": "A", "length_m": 50, "free_speed": 10},
                {"id": "B", "length_m": 50, "free_speed": 10},
                {"id": "x", "length_m": 100, "free_speed": 10},
                {"id": "y", "length_m": 100, "free_speed": 10}
            ],
            "nonsignalized": [{"id": "N", "approaches": [{"link": "A", "sigma": 1}, {"link": "B", "sigma": 2}],
                               "streams": [["A", "x"], ["B", "y"]]}],
            "demand": [{"link": "B", "fine_step": 0, "count": 8}, {"link": "B", "fine_step": 1, "count": 8},
                       {"link": "A", "fine_step": 1, "count": 1}, {"link": "A", "interval": 1, "count": 30}],
            "delta_s": 15, "lambda_s": 5, "horizon": 4
        }"#;
        let (net, sc) = parse_scenario(text).unwrap();
        let plan = SignalPlan::default();
        assert_feasible(&net, &sc, &plan, 0, 4);
        assert_feasible(&net, &sc, &plan, 2, 2);
    }

    #[test]
    fn small_big_m_is_refused() {
        let (net, sc) = parse_scenario(TWO_INTERSECTIONS).unwrap();
        let sim = Simulator::new(&net, &sc).unwrap();
        let s0 = sim.initial_state();
        let opts = BuildOptions { big_m: Some(1.0), ..Default::default() };
        assert!(build_milp(&net, &sc, &s0, &SignalPlan::default(), 2, &opts).is_err());
        let opts = BuildOptions { big_m: Some(1.0), unchecked_big_m: true, ..Default::default() };
        assert!(build_milp(&net, &sc, &s0, &SignalPlan::new(vec![vec![]]), 2, &opts).is_ok());
    }

    #[test]
    fn product_rows_pin_the_product() {
        let mut m = MilpModel::new("p");
        let mut atlas = VariableAtlas::default();
        let b = m.add_var("b", VarKind::Binary, 0.0, 1.0);
        atlas.insert(Symbol::Occupied { node: 0, group: 0, t: 1 }, b).unwrap();
        let y = m.add_var("y", VarKind::Integer, 2.0, 9.0);
        atlas.insert(Symbol::Arrival { node: 0, group: 0, t: 0 }, y).unwrap();
        let (l, s, ns, nn, st) = (vec![], vec![], vec![], vec!["N".to_string()], vec![]);
        let names = Names { links: &l, streams: &s, nodes_sig: &ns, nodes_non: &nn, stages: &st };
        let z = linearize_product(&mut m, &mut atlas, Symbol::ProdArrival { node: 0, group: 0, t: 1 }, &names, b, &LinExpr::var(y), (2.0, 9.0)).unwrap();
        for bv in [0.0, 1.0] {
            for yv in 2..=9 {
                for zv in -1..=10 {
                    let mut x = vec![0.0; 3];
                    x[b] = bv;
                    x[y] = yv as f64;
                    x[z] = zv as f64;
                    let ok = m.violations(&x, 1e-9).is_empty();
                    assert_eq!(ok, zv as f64 == bv * yv as f64, "b={bv} y={yv} z={zv}");
                }
            }
        }
    }
}
