//! Trajectory CSV, run summaries, plan files and plot-ready CSV grids.

use crate::error::{invalid, Error, Result};
use crate::network::{NetworkModel, Node};
use crate::plan::SignalPlan;
use crate::sim::{total_delay, Trajectory};
use crate::study::{Heatmap, StudyTable};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const TRAJECTORY_COLUMNS: [&str; 6] = ["interval", "link", "volume", "inflow", "outflow", "delay_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub interval: usize,
    pub link: String,
    pub volume: u32,
    pub inflow: u32,
    pub outflow: u32,
    pub delay_s: f64,
}

pub fn trajectory_rows(traj: &Trajectory, net: &NetworkModel) -> Vec<TrajectoryRow> {
    let mut rows = Vec::with_capacity(traj.records.len() * net.links.len());
    for r in &traj.records {
        for (i, l) in net.links.iter().enumerate() {
            rows.push(TrajectoryRow {
                interval: r.k,
                link: l.id.clone(),
                volume: r.volumes[i],
                inflow: r.inflow[i],
                outflow: r.outflow[i],
                delay_s: r.delay[i],
            });
        }
    }
    rows
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Always carries the header line, even for an empty trajectory.
fn write_csv<T: Serialize>(header: &[&str], rows: &[T]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(csv_err)?;
    String::from_utf8(bytes).map_err(csv_err)
}

pub fn trajectory_csv(traj: &Trajectory, net: &NetworkModel) -> Result<String> {
    write_csv(&TRAJECTORY_COLUMNS, &trajectory_rows(traj, net))
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != TRAJECTORY_COLUMNS {
        return Err(Error::Parse(format!("unexpected trajectory header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub horizon: usize,
    /// Initial occupants plus everything injected.
    pub total_vehicles: u64,
    pub total_delay_s: f64,
    pub average_delay_s: f64,
    pub exited: u64,
    pub in_network: u64,
    /// Largest per-interval count left on an intersection's approaches
    /// after the interval's outflow, keyed by intersection id.
    pub max_queue: BTreeMap<String, u64>,
}

/// Approach links per intersection, keyed by id.
pub fn approaches(net: &NetworkModel) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for s in &net.signalized {
        out.insert(s.id.clone(), Vec::new());
    }
    for s in &net.nonsignalized {
        out.insert(s.id.clone(), Vec::new());
    }
    for (i, l) in net.links.iter().enumerate() {
        let id = match l.downstream {
            Node::Signalized(j) => &net.signalized[j].id,
            Node::NonSignalized(j) => &net.nonsignalized[j].id,
            Node::Boundary => continue,
        };
        out.get_mut(id).expect("declared intersection").push(i);
    }
    out
}

pub fn summarize(traj: &Trajectory, net: &NetworkModel, delta_s: f64) -> RunSummary {
    let delay = total_delay(traj, net, delta_s).total;
    let initial: u64 = traj.records.first().map_or(0, |r| r.volumes.iter().map(|&v| v as u64).sum());
    let vehicles = initial + traj.injected_total;
    let in_network = traj.final_state.volumes.iter().map(|&v| v as u64).sum();
    let max_queue = approaches(net)
        .into_iter()
        .map(|(id, links)| {
            let q = traj
                .records
                .iter()
                .map(|r| links.iter().map(|&i| r.volumes[i].saturating_sub(r.outflow[i]) as u64).sum::<u64>())
                .max()
                .unwrap_or(0);
            (id, q)
        })
        .collect();
    RunSummary {
        horizon: traj.records.len(),
        total_vehicles: vehicles,
        total_delay_s: delay,
        average_delay_s: if vehicles > 0 { delay / vehicles as f64 } else { 0.0 },
        exited: traj.exited_total,
        in_network,
        max_queue,
    }
}

pub fn summary_json(s: &RunSummary) -> String {
    serde_json::to_string_pretty(s).expect("summary serializes")
}

/// Stage ids per interval, keyed by signalized intersection id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub stages: BTreeMap<String, Vec<String>>,
}

pub fn plan_to_json(plan: &SignalPlan, net: &NetworkModel) -> String {
    let stages = net
        .signalized
        .iter()
        .zip(&plan.stages)
        .map(|(s, seq)| (s.id.clone(), seq.iter().map(|&w| s.stages[w].id.clone()).collect()))
        .collect();
    serde_json::to_string_pretty(&PlanFile { stages }).expect("plan serializes")
}

pub fn parse_plan(text: &str, net: &NetworkModel) -> Result<SignalPlan> {
    let file: PlanFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    for id in file.stages.keys() {
        if !net.signalized.iter().any(|s| &s.id == id) {
            return invalid(format!("plan names unknown intersection {id:?}"));
        }
    }
    let mut stages = Vec::with_capacity(net.signalized.len());
    for s in &net.signalized {
        let Some(seq) = file.stages.get(&s.id) else {
            return invalid(format!("plan has no entry for intersection {:?}", s.id));
        };
        let mut idx = Vec::with_capacity(seq.len());
        for name in seq {
            match s.stages.iter().position(|st| &st.id == name) {
                Some(w) => idx.push(w),
                None => return invalid(format!("intersection {:?} has no stage {name:?}", s.id)),
            }
        }
        stages.push(idx);
    }
    Ok(SignalPlan::new(stages))
}

/// One row per interval.
pub fn delay_series_csv(traj: &Trajectory, net: &NetworkModel, delta_s: f64) -> Result<String> {
    let b = total_delay(traj, net, delta_s);
    let rows: Vec<(usize, f64)> = traj.records.iter().map(|r| r.k).zip(b.per_interval).collect();
    write_csv(&["interval", "delay_s"], &rows)
}

/// One row per intersection.
pub fn queue_heatmap_csv(h: &Heatmap) -> Result<String> {
    let rows: Vec<(usize, usize, &str, f64)> =
        h.cells.iter().map(|c| (c.row, c.col, c.id.as_str(), c.waiting)).collect();
    write_csv(&["row", "col", "id", "waiting"], &rows)
}

/// Every (case, seed) row of a study.
pub fn study_table_csv(t: &StudyTable) -> Result<String> {
    let rows: Vec<_> = t
        .rows
        .iter()
        .map(|r| (&r.case, r.seed, r.signalized, r.total_vehicles, r.total_delay_s, r.average_delay_s, r.limited_epochs))
        .collect();
    write_csv(
        &["case", "seed", "signalized", "total_vehicles", "total_delay_s", "average_delay_s", "limited_epochs"],
        &rows,
    )
}

/// Per-case means over seeds, in first-seen case order.
pub fn study_bars_csv(t: &StudyTable) -> Result<String> {
    let mut order: Vec<&str> = Vec::new();
    let mut acc: BTreeMap<&str, (usize, f64, f64, f64)> = BTreeMap::new();
    for r in &t.rows {
        let e = acc.entry(&r.case).or_insert_with(|| {
            order.push(&r.case);
            (0, 0.0, 0.0, 0.0)
        });
        e.0 += 1;
        e.1 += r.total_vehicles as f64;
        e.2 += r.total_delay_s;
        e.3 += r.average_delay_s;
    }
    let rows: Vec<_> = order
        .iter()
        .map(|c| {
            let (n, v, d, a) = acc[c];
            let n = n as f64;
            (*c, n as usize, v / n, d / n, a / n)
        })
        .collect();
    write_csv(&["case", "seeds", "total_vehicles", "total_delay_s", "average_delay_s"], &rows)
}
