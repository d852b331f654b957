//! Mixed-rate time stepping, conservation checks and the delay metric.

use crate::error::{corrupt, Error, Result};
use crate::fcfs::{self, Indicator};
use crate::network::{Level, NetworkModel, Node};
use crate::plan::SignalPlan;
use crate::scenario::{validate_network, DemandTime, MergeMode, ScenarioConfig};
use crate::signal::{self, floor_count};

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub k: usize,
    /// C_i(k). For segmented links this is segments plus entry buffer.
    pub volumes: Vec<u32>,
    pub segments: Vec<Vec<u32>>,
    /// Vehicles handed over by a signalized intersection, waiting to enter
    /// the far segment of a segmented link.
    pub buffers: Vec<u32>,
    /// T per approach group, per all-way-stop intersection.
    pub indicators: Vec<Vec<Indicator>>,
    /// l(k−1) per stream.
    pub levels: Vec<Level>,
    /// Vehicles waiting outside each entry link.
    pub queues: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineRecord {
    pub t: usize,
    pub segments: Vec<Vec<u32>>,
    pub buffers: Vec<u32>,
    pub indicators: Vec<Vec<Indicator>>,
    /// Green group per all-way-stop intersection.
    pub greens: Vec<usize>,
    /// Per link, f^{j,j−1}(t) at position j−1.
    pub shifts: Vec<Vec<u32>>,
    /// Buffer → far segment per link.
    pub releases: Vec<u32>,
    /// Per stream; nonzero only for all-way-stop streams.
    pub boundary: Vec<u32>,
    /// Entry injections into the far segment per link.
    pub injected: Vec<u32>,
    pub queues: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub k: usize,
    pub volumes: Vec<u32>,
    /// d_i(k), including injections.
    pub inflow: Vec<u32>,
    /// s_i(k).
    pub outflow: Vec<u32>,
    /// Entry injections at this interval, fine steps summed.
    pub injected: Vec<u32>,
    /// f per stream, summed over fine steps for all-way-stop streams.
    pub stream_flows: Vec<u32>,
    pub levels: Vec<Level>,
    pub stages: Vec<usize>,
    pub queues: Vec<u64>,
    pub fine: Vec<FineRecord>,
    pub delay: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<IntervalRecord>,
    pub final_state: SimState,
    pub plan: SignalPlan,
    pub injected_total: u64,
    pub exited_total: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayBreakdown {
    pub total: f64,
    pub per_link: Vec<f64>,
    pub per_interval: Vec<f64>,
}

/// Σ_i Σ_k [Δ·C_i(k) − (L_i/v_i)·s_i(k)] in seconds.
pub fn total_delay(traj: &Trajectory, net: &NetworkModel, delta_s: f64) -> DelayBreakdown {
    let mut per_link = vec![0.0; net.links.len()];
    let mut per_interval = vec![0.0; traj.records.len()];
    let mut total = 0.0;
    for (k, r) in traj.records.iter().enumerate() {
        for (i, l) in net.links.iter().enumerate() {
            let d = link_delay(delta_s, l.free_travel_s(), r.volumes[i], r.outflow[i]);
            per_link[i] += d;
            per_interval[k] += d;
            total += d;
        }
    }
    DelayBreakdown { total, per_link, per_interval }
}

pub(crate) fn link_delay(delta_s: f64, travel_s: f64, c: u32, s: u32) -> f64 {
    delta_s * c as f64 - travel_s * s as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Upstream {
    Entry,
    Signalized,
    NonSignalized,
}

pub struct Simulator<'a> {
    pub net: &'a NetworkModel,
    pub sc: &'a ScenarioConfig,
    m: usize,
    upstream: Vec<Upstream>,
    /// Per link: inbound streams ordered by (priority, index).
    inbound: Vec<Vec<usize>>,
    stage: Vec<Option<(usize, usize)>>,
}

impl<'a> Simulator<'a> {
    /// Refuses input that fails validation.
    pub fn new(net: &'a NetworkModel, sc: &'a ScenarioConfig) -> Result<Self> {
        validate_network(net, sc).into_result()?;
        let upstream = net
            .links
            .iter()
            .map(|l| match l.upstream {
                Node::Boundary => Upstream::Entry,
                Node::Signalized(_) => Upstream::Signalized,
                Node::NonSignalized(_) => Upstream::NonSignalized,
            })
            .collect();
        let inbound = (0..net.links.len())
            .map(|l| {
                let mut v = net.in_streams(l).to_vec();
                v.sort_by_key(|&s| (net.streams[s].priority, s));
                v
            })
            .collect();
        let stage = (0..net.streams.len()).map(|s| net.stream_stage(s)).collect();
        Ok(Simulator { net, sc, m: sc.m(), upstream, inbound, stage })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn initial_state(&self) -> SimState {
        let net = self.net;
        let init = &self.sc.initial;
        let indicators = net
            .nonsignalized
            .iter()
            .map(|j| {
                j.groups
                    .iter()
                    .map(|g| {
                        let c0: u32 = g.iter().map(|&l| init.segments[l].first().copied().unwrap_or(0)).sum();
                        if c0 > 0 {
                            Indicator::Since(0)
                        } else {
                            Indicator::Empty
                        }
                    })
                    .collect()
            })
            .collect();
        SimState {
            k: 0,
            volumes: init.volumes.clone(),
            segments: init.segments.clone(),
            buffers: vec![0; net.links.len()],
            indicators,
            levels: vec![Level::from_integer(0); net.streams.len()],
            queues: vec![0; net.links.len()],
        }
    }

    fn theta_history(&self, plan: &SignalPlan, j: usize, w: usize, k: usize, r: usize) -> Vec<bool> {
        (0..r + 2)
            .map(|p| plan.theta(j, w, k as isize - (r + 1) as isize + p as isize))
            .collect()
    }

    /// l(k) for every stream.
    pub fn levels_at(&self, state: &SimState, plan: &SignalPlan) -> Result<Vec<Level>> {
        let k = state.k;
        let mut out = vec![Level::from_integer(0); self.net.streams.len()];
        for (s, st) in self.net.streams.iter().enumerate() {
            let (Some((j, w)), Some(table)) = (self.stage[s], st.levels.as_ref()) else {
                continue;
            };
            let r = table.memory_depth();
            let hist = self.theta_history(plan, j, w, k, r);
            let next = plan.theta(j, w, k as isize + 1);
            out[s] = signal::speed_level(&hist, next, state.levels[s], table)?;
        }
        Ok(out)
    }

    fn exit_flow(&self, i: usize, c: u32) -> u32 {
        c.min(floor_count(self.net.links[i].discharge(self.sc.delta_s)))
    }

    /// Signalized flows and coarse exits for interval k as the greatest fixed
    /// point of the floor-min laws.
    fn coarse_flows(&self, state: &SimState, levels: &[Level]) -> (Vec<u32>, Vec<u32>) {
        let net = self.net;
        let k = state.k;
        let c = &state.volumes;
        let nl = net.links.len();
        let mut desired = vec![0u32; net.streams.len()];
        for (s, st) in net.streams.iter().enumerate() {
            if matches!(st.node, Node::Signalized(_)) {
                let l = &net.links[st.from];
                let speed = signal::level_f64(&levels[s]) * l.discharge(self.sc.delta_s);
                desired[s] = floor_count((self.sc.gamma(s, k) * c[st.from] as f64).min(speed));
            }
        }
        let mut out = vec![0u32; nl];
        for i in 0..nl {
            let l = &net.links[i];
            if l.is_fine() {
                continue;
            }
            out[i] = if l.is_exit() {
                self.exit_flow(i, c[i])
            } else {
                net.out_streams(i).iter().map(|&s| desired[s]).sum()
            };
        }
        let mut f = desired.clone();
        loop {
            for j in 0..nl {
                if self.upstream[j] != Upstream::Signalized {
                    continue;
                }
                let lj = &net.links[j];
                let room = if lj.is_fine() {
                    lj.holding_capacity() as i64 - c[j] as i64
                } else {
                    lj.capacity as i64 - c[j] as i64 + out[j] as i64
                }
                .max(0) as u32;
                let mut used = 0u32;
                let mut higher_positive = false;
                for &s in &self.inbound[j] {
                    let mut cap = room.saturating_sub(used);
                    if self.sc.merge_mode == MergeMode::Strict && higher_positive {
                        cap = 0;
                    }
                    f[s] = desired[s].min(cap);
                    used += f[s];
                    higher_positive |= f[s] > 0;
                }
            }
            let mut next = out.clone();
            for i in 0..nl {
                let l = &net.links[i];
                if !l.is_fine() && !l.is_exit() {
                    next[i] = net.out_streams(i).iter().map(|&s| f[s]).sum();
                }
            }
            if next == out {
                break;
            }
            out = next;
        }
        (f, out)
    }

    /// One fine step. Returns the flows and the post-step segment state.
    #[allow(clippy::too_many_arguments)]
    fn step_fine(
        &self,
        t: usize,
        state: &mut SimState,
        coarse_c: &[u32],
        coarse_s: &[u32],
        acc: &mut [u32],
        fine_demand: &[u64],
        arrivals: &[u32],
        record: &mut Vec<FineRecord>,
    ) -> Result<()> {
        let net = self.net;
        let nl = net.links.len();
        let k = t / self.m;
        let lam = self.sc.lambda_s;
        let before_segments = state.segments.clone();
        let before_buffers = state.buffers.clone();
        let before_ind = state.indicators.clone();
        let before_queues = state.queues.clone();
        for i in 0..nl {
            state.buffers[i] += arrivals[i];
        }

        let greens: Vec<usize> = net
            .nonsignalized
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let keys: Vec<(Indicator, u32)> = (0..x.groups.len())
                    .map(|g| (state.indicators[j][g], x.group_sigma(g)))
                    .collect();
                fcfs::assign_virtual_green(&keys).unwrap_or(0)
            })
            .collect();

        let shift_cap = |i: usize| floor_count(net.links[i].discharge(lam));
        let seg = &state.segments;

        // Desired flows, before any receiver limit.
        let mut want_shift: Vec<Vec<u32>> = vec![Vec::new(); nl];
        let mut want_release = vec![0u32; nl];
        let mut want_boundary = vec![0u32; net.streams.len()];
        for i in 0..nl {
            let l = &net.links[i];
            if !l.is_fine() {
                continue;
            }
            let cap = shift_cap(i);
            want_shift[i] = (1..l.segment_count).map(|j| seg[i][j].min(cap)).collect();
            want_release[i] = state.buffers[i].min(cap);
        }
        for (j, x) in net.nonsignalized.iter().enumerate() {
            for &i in &x.groups[greens[j]] {
                let d = seg[i][0].min(shift_cap(i));
                let outs = net.out_streams(i);
                let w: Vec<f64> = outs.iter().map(|&s| self.sc.gamma(s, k)).collect();
                for (p, share) in fcfs::apportion(d, &w).into_iter().enumerate() {
                    want_boundary[outs[p]] = share;
                }
            }
        }

        // Outflow estimates per segment, descending to the fixed point.
        let mut s_out: Vec<Vec<u32>> = (0..nl)
            .map(|i| {
                let l = &net.links[i];
                (0..l.segment_count)
                    .map(|j| {
                        if j == 0 {
                            net.out_streams(i).iter().map(|&s| want_boundary[s]).sum()
                        } else {
                            want_shift[i][j - 1]
                        }
                    })
                    .collect()
            })
            .collect();
        let mut shift = want_shift.clone();
        let mut release = want_release.clone();
        let mut boundary = want_boundary.clone();
        loop {
            for i in 0..nl {
                let l = &net.links[i];
                if !l.is_fine() {
                    continue;
                }
                for j in 1..l.segment_count {
                    let room = l.segment_capacities[j - 1] as i64 - seg[i][j - 1] as i64 + s_out[i][j - 1] as i64;
                    shift[i][j - 1] = want_shift[i][j - 1].min(room.max(0) as u32);
                }
                let far = l.segment_count - 1;
                let far_room = l.segment_capacities[far] as i64 - seg[i][far] as i64 + s_out[i][far] as i64;
                release[i] = want_release[i].min(far_room.max(0) as u32);
            }
            for p in 0..nl {
                if self.upstream[p] != Upstream::NonSignalized {
                    continue;
                }
                let lp = &net.links[p];
                let room = if lp.is_fine() {
                    let far = lp.segment_count - 1;
                    lp.segment_capacities[far] as i64 - seg[p][far] as i64 + s_out[p][far] as i64
                } else {
                    lp.capacity as i64 - coarse_c[p] as i64 + coarse_s[p] as i64 - acc[p] as i64
                }
                .max(0) as u32;
                let mut used = 0u32;
                for &s in &self.inbound[p] {
                    boundary[s] = want_boundary[s].min(room.saturating_sub(used));
                    used += boundary[s];
                }
            }
            let mut next = s_out.clone();
            for i in 0..nl {
                let l = &net.links[i];
                for j in 0..l.segment_count {
                    next[i][j] = if j == 0 {
                        net.out_streams(i).iter().map(|&s| boundary[s]).sum()
                    } else {
                        shift[i][j - 1]
                    };
                }
            }
            if next == s_out {
                break;
            }
            s_out = next;
        }

        let mut new_seg = state.segments.clone();
        for i in 0..nl {
            let l = &net.links[i];
            if !l.is_fine() {
                continue;
            }
            let n = l.segment_count;
            for j in 0..n {
                let inflow = if j + 1 < n { shift[i][j] } else { release[i] };
                new_seg[i][j] = new_seg[i][j] + inflow - s_out[i][j];
            }
            state.buffers[i] -= release[i];
        }
        for (s, st) in net.streams.iter().enumerate() {
            if boundary[s] == 0 {
                continue;
            }
            let p = st.to;
            if net.links[p].is_fine() {
                let far = net.links[p].segment_count - 1;
                new_seg[p][far] += boundary[s];
            } else {
                acc[p] += boundary[s];
            }
        }

        let mut injected = vec![0u32; nl];
        for i in 0..nl {
            let l = &net.links[i];
            if !(l.is_fine() && l.is_entry()) {
                continue;
            }
            state.queues[i] += fine_demand[i];
            let far = l.segment_count - 1;
            let spare = l.segment_capacities[far].saturating_sub(new_seg[i][far]);
            let e = (state.queues[i].min(spare as u64)) as u32;
            new_seg[i][far] += e;
            state.queues[i] -= e as u64;
            injected[i] = e;
        }

        for i in 0..nl {
            let l = &net.links[i];
            for j in 0..l.segment_count {
                if new_seg[i][j] > l.segment_capacities[j] {
                    return corrupt(
                        format!("link {} segment {j} fine step {}", l.id, t + 1),
                        format!("volume {} exceeds capacity {}", new_seg[i][j], l.segment_capacities[j]),
                    );
                }
            }
        }
        state.segments = new_seg;

        for (j, x) in net.nonsignalized.iter().enumerate() {
            for (g, members) in x.groups.iter().enumerate() {
                let c0: u32 = members.iter().map(|&l| state.segments[l][0]).sum();
                state.indicators[j][g] = fcfs::update_indicator(state.indicators[j][g], c0, t as u32);
            }
        }

        record.push(FineRecord {
            t,
            segments: before_segments,
            buffers: before_buffers,
            indicators: before_ind,
            greens,
            shifts: shift,
            releases: release,
            boundary,
            injected,
            queues: before_queues,
        });
        Ok(())
    }

    /// Advances one coarse interval under `plan`.
    pub fn step_coarse(&self, state: &SimState, plan: &SignalPlan) -> Result<(SimState, IntervalRecord)> {
        let net = self.net;
        let nl = net.links.len();
        let k = state.k;
        let m = self.m;
        if plan.stages.len() != net.signalized.len() {
            return Err(Error::InvalidParameter("plan does not match the network".into()));
        }
        for (j, x) in net.signalized.iter().enumerate() {
            match plan.stage(j, k as isize) {
                Some(w) if w < x.stages.len() => {}
                _ => return Err(Error::InvalidParameter(format!("no valid stage for {} at k={k}", x.id))),
            }
        }

        let levels = self.levels_at(state, plan)?;
        let (f, coarse_s) = self.coarse_flows(state, &levels);
        let c = state.volumes.clone();

        let mut sig_in = vec![0u32; nl];
        for (s, st) in net.streams.iter().enumerate() {
            if matches!(st.node, Node::Signalized(_)) {
                sig_in[st.to] += f[s];
            }
        }

        let mut next = state.clone();
        let no_arrivals = vec![0u32; nl];
        let arrivals: Vec<u32> = (0..nl).map(|i| if net.links[i].is_fine() { sig_in[i] } else { 0 }).collect();

        // Per-link demand arriving this interval: fine-step entries land on
        // their own step, interval entries on the first step.
        let mut fine_demand: Vec<Vec<u64>> = vec![vec![0; nl]; m];
        let mut coarse_demand = vec![0u64; nl];
        for d in &self.sc.demand {
            let (kk, step) = match d.when {
                DemandTime::Interval(kk) => (kk, 0),
                DemandTime::FineStep(t) => (t / m, t % m),
            };
            if kk != k {
                continue;
            }
            if net.links[d.link].is_fine() {
                fine_demand[step][d.link] += d.count as u64;
            } else {
                coarse_demand[d.link] += d.count as u64;
            }
        }

        let mut acc = vec![0u32; nl];
        let mut fine = Vec::with_capacity(m);
        for step in 0..m {
            let t = k * m + step;
            let arr = if step == 0 { &arrivals } else { &no_arrivals };
            self.step_fine(t, &mut next, &c, &coarse_s, &mut acc, &fine_demand[step], arr, &mut fine)?;
        }

        let mut stream_flows = f.clone();
        for rec in &fine {
            for (s, &b) in rec.boundary.iter().enumerate() {
                stream_flows[s] += b;
            }
        }
        let mut fine_injected = vec![0u32; nl];
        for rec in &fine {
            for i in 0..nl {
                fine_injected[i] += rec.injected[i];
            }
        }

        let mut inflow = vec![0u32; nl];
        let mut outflow = vec![0u32; nl];
        let mut injected = vec![0u32; nl];
        for i in 0..nl {
            let l = &net.links[i];
            let into: u32 = net.in_streams(i).iter().map(|&s| stream_flows[s]).sum();
            if l.is_fine() {
                outflow[i] = net.out_streams(i).iter().map(|&s| stream_flows[s]).sum();
                inflow[i] = into + fine_injected[i];
                let v = next.segments[i].iter().sum::<u32>() + next.buffers[i];
                if v as i64 != c[i] as i64 + inflow[i] as i64 - outflow[i] as i64 {
                    return corrupt(
                        format!("link {} interval {k}", l.id),
                        format!("conservation broken: {} + {} - {} != {v}", c[i], inflow[i], outflow[i]),
                    );
                }
                next.volumes[i] = v;
            } else {
                outflow[i] = coarse_s[i];
                if outflow[i] > c[i] {
                    return corrupt(format!("link {} interval {k}", l.id), "outflow exceeds volume");
                }
                let mut v = c[i] as i64 + into as i64 - outflow[i] as i64;
                if l.is_entry() {
                    next.queues[i] += coarse_demand[i];
                    let spare = (l.capacity as i64 - v).max(0) as u64;
                    let e = next.queues[i].min(spare);
                    next.queues[i] -= e;
                    injected[i] = e as u32;
                    v += e as i64;
                }
                inflow[i] = into + injected[i];
                if v < 0 || v > l.capacity as i64 {
                    return corrupt(
                        format!("link {} interval {}", l.id, k + 1),
                        format!("volume {v} outside [0, {}]", l.capacity),
                    );
                }
                next.volumes[i] = v as u32;
            }
        }
        for i in 0..nl {
            if net.links[i].is_fine() {
                injected[i] = fine_injected[i];
            }
        }

        let delay: Vec<f64> = (0..nl)
            .map(|i| link_delay(self.sc.delta_s, net.links[i].free_travel_s(), c[i], outflow[i]))
            .collect();
        let stages = (0..net.signalized.len())
            .map(|j| plan.stage(j, k as isize).unwrap_or(0))
            .collect();

        next.levels = levels.clone();
        next.k = k + 1;
        let queues = state.queues.clone();
        Ok((
            next,
            IntervalRecord {
                k,
                volumes: c,
                inflow,
                outflow,
                injected,
                stream_flows,
                levels,
                stages,
                queues,
                fine,
                delay,
            },
        ))
    }

    /// Runs `n` intervals from the scenario's initial state.
    pub fn run(&self, plan: &SignalPlan, n: usize) -> Result<Trajectory> {
        let state = self.initial_state();
        self.run_from(state, plan, n)
    }

    pub fn run_from(&self, mut state: SimState, plan: &SignalPlan, n: usize) -> Result<Trajectory> {
        let start_in: u64 = state.volumes.iter().map(|&v| v as u64).sum();
        let mut records = Vec::with_capacity(n);
        let mut injected_total = 0u64;
        let mut exited_total = 0u64;
        for _ in 0..n {
            let (next, rec) = self.step_coarse(&state, plan)?;
            injected_total += rec.injected.iter().map(|&x| x as u64).sum::<u64>();
            for (i, l) in self.net.links.iter().enumerate() {
                if l.is_exit() {
                    exited_total += rec.outflow[i] as u64;
                }
            }
            let held: u64 = next.volumes.iter().map(|&v| v as u64).sum();
            if start_in + injected_total != held + exited_total {
                return corrupt(
                    format!("interval {}", rec.k),
                    format!(
                        "network conservation broken: {start_in} + {injected_total} != {held} + {exited_total}"
                    ),
                );
            }
            records.push(rec);
            state = next;
        }
        Ok(Trajectory {
            records,
            final_state: state,
            plan: plan.clone(),
            injected_total,
            exited_total,
        })
    }
}

/// Validates, then simulates the scenario's full horizon under `plan`.
pub fn run_scenario(net: &NetworkModel, sc: &ScenarioConfig, plan: &SignalPlan) -> Result<Trajectory> {
    let sim = Simulator::new(net, sc)?;
    plan.check(net, sc.horizon)?;
    sim.run(plan, sc.horizon)
}

/// Interval-by-interval network balance: held(k+1) = held(k) + injected − exited.
pub fn audit_conservation(net: &NetworkModel, traj: &Trajectory) -> Vec<String> {
    let mut out = Vec::new();
    let held = |v: &[u32]| v.iter().map(|&x| x as u64).sum::<u64>();
    let (mut inj, mut ex) = (0u64, 0u64);
    for (k, r) in traj.records.iter().enumerate() {
        let i_k: u64 = r.injected.iter().map(|&x| x as u64).sum();
        let e_k: u64 = (0..net.links.len()).filter(|&i| net.links[i].is_exit()).map(|i| r.outflow[i] as u64).sum();
        inj += i_k;
        ex += e_k;
        let next = traj.records.get(k + 1).map_or(&traj.final_state.volumes, |n| &n.volumes);
        if held(&r.volumes) + i_k != held(next) + e_k {
            out.push(format!("interval {k}: {} + {i_k} != {} + {e_k}", held(&r.volumes), held(next)));
        }
        for (i, l) in net.links.iter().enumerate() {
            if r.volumes[i] > l.capacity {
                out.push(format!("interval {k}: link {} holds {} over capacity {}", l.id, r.volumes[i], l.capacity));
            }
        }
    }
    if inj != traj.injected_total || ex != traj.exited_total {
        out.push(format!("totals {inj}/{ex} disagree with {}/{}", traj.injected_total, traj.exited_total));
    }
    out
}

/// All-way-stop invariants over every recorded fine step: one virtual green
/// per intersection and only green approaches discharging, the green staying
/// with a column until segment 0 empties, and indicators empty exactly when
/// segment 0 is.
pub fn audit_fcfs(net: &NetworkModel, traj: &Trajectory) -> Vec<String> {
    let mut out = Vec::new();
    let fine: Vec<&FineRecord> = traj.records.iter().flat_map(|r| r.fine.iter()).collect();
    for (n, f) in fine.iter().enumerate() {
        let t = f.t;
        if f.greens.len() != net.nonsignalized.len() {
            out.push(format!("t={t}: {} greens for {} intersections", f.greens.len(), net.nonsignalized.len()));
            continue;
        }
        for (j, x) in net.nonsignalized.iter().enumerate() {
            let g = f.greens[j];
            if g >= x.groups.len() {
                out.push(format!("t={t} {}: green group {g} out of range", x.id));
                continue;
            }
            for &s in &x.streams {
                let from = net.streams[s].from;
                if f.boundary[s] > 0 && !x.groups[g].contains(&from) {
                    out.push(format!("t={t} {}: {} discharges on red", x.id, net.links[from].id));
                }
            }
            for (h, members) in x.groups.iter().enumerate() {
                let c0: u32 = members.iter().map(|&l| f.segments[l][0]).sum();
                match f.indicators[j][h] {
                    Indicator::Empty if c0 > 0 => out.push(format!("t={t} {}: group {h} holds {c0} but is empty", x.id)),
                    Indicator::Since(_) if c0 == 0 => out.push(format!("t={t} {}: group {h} flagged with no vehicles", x.id)),
                    Indicator::Since(a) if a as usize > t => out.push(format!("t={t} {}: group {h} flagged from the future {a}", x.id)),
                    _ => {}
                }
            }
            if let Some(next) = fine.get(n + 1) {
                let c0: u32 = x.groups[g].iter().map(|&l| next.segments[l][0]).sum();
                if c0 > 0 && next.greens[j] != g {
                    out.push(format!("t={} {}: green left a column of {c0}", t + 1, x.id));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    const ONE_SIGNAL: &str = r#"{
        "links": [
            {"id": "a", "length_m": 200, "free_speed": 10},
            {"id": "b", "length_m": 200, "free_speed": 10},
            {"id": "xa", "length_m": 100, "free_speed": 10},
            {"id": "xb", "length_m": 100, "free_speed": 10}
        ],
        "signalized": [{"id": "J", "stages": [
            {"id": "A", "streams": [["a", "xa"]]},
            {"id": "B", "streams": [["b", "xb"]]}]}],
        "speed_levels": {"default": ["1", "1"]},
        "initial": [{"link": "a", "volume": 5}, {"link": "b", "volume": 3}],
        "delta_s": 10, "lambda_s": 10, "horizon": 3
    }"#;

    fn two_link_awsc(demand: &str) -> String {
        format!(
            r#"{{
            "links": [
                {{"id": "A", "length_m": 50, "free_speed": 10}},
                {{"id": "B", "length_m": 50, "free_speed": 10}},
                {{"id": "x", "length_m": 100, "free_speed": 10}},
                {{"id": "y", "length_m": 100, "free_speed": 10}}
            ],
            "nonsignalized": [{{"id": "N", "approaches": [{{"link": "A", "sigma": 1}}, {{"link": "B", "sigma": 2}}],
                               "streams": [["A", "x"], ["B", "y"]]}}],
            "demand": [{demand}],
            "delta_s": 15, "lambda_s": 5, "horizon": 4
        }}"#
        )
    }

    #[test]
    fn empty_network_stays_empty() {
        let text = ONE_SIGNAL.replace(r#""initial": [{"link": "a", "volume": 5}, {"link": "b", "volume": 3}],"#, "");
        let (net, sc) = parse_scenario(&text).unwrap();
        let sim = Simulator::new(&net, &sc).unwrap();
        let s0 = sim.initial_state();
        let (s1, rec) = sim.step_coarse(&s0, &SignalPlan::constant(&net, 0, 3)).unwrap();
        assert_eq!(s1.volumes, s0.volumes);
        assert!(rec.stream_flows.iter().all(|&f| f == 0));
    }

    #[test]
    fn green_stream_moves_everyone_red_stream_holds() {
        let (net, sc) = parse_scenario(ONE_SIGNAL).unwrap();
        let sim = Simulator::new(&net, &sc).unwrap();
        // Stage A held: level 1, v*·d*·Δ = 16.7 ≥ 5.
        let traj = sim.run(&SignalPlan::constant(&net, 0, 3), 1).unwrap();
        let r = &traj.records[0];
        let a_xa = net.stream_index(0, 2).unwrap();
        let b_xb = net.stream_index(1, 3).unwrap();
        assert_eq!(r.stream_flows[a_xa], 5);
        assert_eq!(r.stream_flows[b_xb], 0);
        assert_eq!(traj.final_state.volumes, vec![0, 3, 5, 0]);
    }

    #[test]
    fn first_green_followed_by_red_discharges_nothing() {
        let (net, sc) = parse_scenario(ONE_SIGNAL).unwrap();
        let sim = Simulator::new(&net, &sc).unwrap();
        let traj = sim.run(&SignalPlan::new(vec![vec![0, 1, 1]]), 1).unwrap();
        assert_eq!(traj.records[0].levels[0], Level::from_integer(0));
        assert_eq!(traj.records[0].stream_flows[0], 0);
    }

    #[test]
    fn delay_examples() {
        assert_eq!(link_delay(5.0, 100.0 / 20.0, 4, 0), 20.0);
        let (net, sc) = parse_scenario(ONE_SIGNAL).unwrap();
        let sim = Simulator::new(&net, &sc).unwrap();
        let traj = sim.run(&SignalPlan::constant(&net, 0, 3), 0).unwrap();
        assert_eq!(total_delay(&traj, &net, sc.delta_s).total, 0.0);
    }

    #[test]
    fn column_keeps_green_until_empty() {
        let demand = r#"{"link": "A", "fine_step": 0, "count": 3}"#;
        let (net, sc) = parse_scenario(&two_link_awsc(demand)).unwrap();
        let sim = Simulator::new(&net, &sc).unwrap();
        let traj = sim.run(&SignalPlan::default(), 2).unwrap();
        let fine: Vec<&FineRecord> = traj.records.iter().flat_map(|r| r.fine.iter()).collect();
        assert_eq!(fine[1].segments[0][0], 3);
        assert_eq!(fine[1].greens[0], 0);
        assert_eq!(fine[1].boundary[0], 3);
        assert_eq!(fine[2].segments[0][0], 0);
    }

    #[test]
    fn simultaneous_arrivals_go_by_sigma() {
        let demand = r#"{"link": "A", "fine_step": 0, "count": 2}, {"link": "B", "fine_step": 0, "count": 2}"#;
        let (net, sc) = parse_scenario(&two_link_awsc(demand)).unwrap();
        let sim = Simulator::new(&net, &sc).unwrap();
        let traj = sim.run(&SignalPlan::default(), 1).unwrap();
        let f = &traj.records[0].fine;
        assert_eq!(f[1].boundary, vec![2, 0]);
        assert_eq!(f[2].boundary, vec![0, 2]);
    }

    #[test]
    fn earlier_column_keeps_green_over_later_arrival() {
        // B's column starts at t = 1 and is fed every step; A arrives at t = 2.
        let demand = r#"{"link": "B", "fine_step": 0, "count": 8}, {"link": "B", "fine_step": 1, "count": 8},
                        {"link": "B", "fine_step": 2, "count": 8}, {"link": "A", "fine_step": 1, "count": 1}"#;
        let (net, sc) = parse_scenario(&two_link_awsc(demand)).unwrap();
        let sim = Simulator::new(&net, &sc).unwrap();
        let traj = sim.run(&SignalPlan::default(), 2).unwrap();
        let fine: Vec<&FineRecord> = traj.records.iter().flat_map(|r| r.fine.iter()).collect();
        assert_eq!(fine[2].indicators[0], vec![Indicator::Since(2), Indicator::Since(1)]);
        for t in 1..=3 {
            assert_eq!(fine[t].greens[0], 1, "t = {t}");
        }
        assert_eq!(fine[4].greens[0], 0);
        assert_eq!(fine[4].boundary[0], 1);
    }

    #[test]
    fn zero_demand_run_has_zero_delay() {
        let (net, sc) = parse_scenario(&two_link_awsc("")).unwrap();
        let traj = run_scenario(&net, &sc, &SignalPlan::default()).unwrap();
        assert_eq!(total_delay(&traj, &net, sc.delta_s).total, 0.0);
        assert!(traj.records.iter().all(|r| r.volumes.iter().all(|&v| v == 0)));
    }

    #[test]
    fn unvalidated_input_refused() {
        let text = ONE_SIGNAL.replace("\"lambda_s\": 10", "\"lambda_s\": 3");
        let (net, sc) = parse_scenario(&text).unwrap();
        assert!(matches!(Simulator::new(&net, &sc), Err(Error::Validation { .. })));
    }

    #[test]
    fn audits_pass_clean_runs_and_flag_tampering() {
        let text = two_link_awsc(r#"{"link": "A", "fine_step": 0, "count": 3}, {"link": "B", "fine_step": 1, "count": 2},
                                  {"link": "A", "fine_step": 2, "count": 1}"#);
        let (net, sc) = parse_scenario(&text).unwrap();
        let traj = run_scenario(&net, &sc, &SignalPlan::new(Vec::new())).unwrap();
        assert!(audit_conservation(&net, &traj).is_empty());
        assert!(audit_fcfs(&net, &traj).is_empty());

        let mut bad = traj.clone();
        bad.records[1].volumes[2] += 1;
        assert!(!audit_conservation(&net, &bad).is_empty());

        let mut bad = traj.clone();
        let f = bad.records.iter_mut().flat_map(|r| r.fine.iter_mut()).find(|f| f.segments[0][0] > 0).unwrap();
        f.indicators[0][0] = Indicator::Empty;
        assert!(!audit_fcfs(&net, &bad).is_empty());

        let mut bad = traj;
        let f = bad.records.iter_mut().flat_map(|r| r.fine.iter_mut()).find(|f| f.segments[0][0] > 0).unwrap();
        f.greens[0] = 1;
        assert!(!audit_fcfs(&net, &bad).is_empty());
    }
}
