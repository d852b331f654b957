//! Grid study: fully, partially and non-signalized networks under seeded
//! demand, compared on total and average delay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::control::{receding_horizon_control, ControllerConfig};
use crate::error::{invalid, Result};
use crate::network::NetworkModel;
use crate::plan::SignalPlan;
use crate::scenario::{parse_scenario, ScenarioConfig};
use crate::sim::{run_scenario, total_delay, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Signalization {
    All,
    /// Intersection ids, e.g. "I1_2" for row 1, column 2.
    Subset(Vec<String>),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandLevel {
    Low,
    Medium,
    High,
}

impl DemandLevel {
    pub fn name(self) -> &'static str {
        match self {
            DemandLevel::Low => "low",
            DemandLevel::Medium => "medium",
            DemandLevel::High => "high",
        }
    }
}

/// How signalized intersections pick their stages.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalControl {
    Optimized(ControllerConfig),
    Cyclic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyGrid {
    pub rows: usize,
    pub cols: usize,
    pub signalization: Signalization,
    pub demand: DemandLevel,
    pub delta_s: f64,
    pub lambda_s: f64,
    pub intervals: usize,
    pub free_speed: f64,
    /// Vehicles per entry link per interval, inclusive.
    pub low_range: (u32, u32),
    pub high_range: (u32, u32),
    pub speed_levels: Vec<String>,
}

impl StudyGrid {
    /// 4×4 grid, Δ = 15 s over 180 s, links one free-flow interval long.
    pub fn new(signalization: Signalization, demand: DemandLevel) -> Self {
        StudyGrid {
            rows: 4,
            cols: 4,
            signalization,
            demand,
            delta_s: 15.0,
            lambda_s: 3.75,
            intervals: 12,
            free_speed: 10.0,
            low_range: (0, 4),
            high_range: (8, 12),
            speed_levels: vec!["1".into(), "3/4".into(), "1/2".into()],
        }
    }

    pub fn node_id(r: usize, c: usize) -> String {
        format!("I{r}_{c}")
    }

    /// Nine of sixteen: the 3×3 block at the top-left corner. Scaled to
    /// other grid sizes as every intersection outside the last row and column.
    pub fn default_subset(rows: usize, cols: usize) -> Vec<String> {
        let mut v = Vec::new();
        for r in 0..rows.saturating_sub(1).max(1) {
            for c in 0..cols.saturating_sub(1).max(1) {
                v.push(Self::node_id(r, c));
            }
        }
        v
    }

    fn is_signalized(&self, r: usize, c: usize) -> bool {
        match &self.signalization {
            Signalization::All => true,
            Signalization::None => false,
            Signalization::Subset(ids) => ids.contains(&Self::node_id(r, c)),
        }
    }

    pub fn signalized_count(&self) -> usize {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| self.is_signalized(r, c))
            .count()
    }

    pub fn check(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.intervals == 0 {
            return invalid("grid needs at least one row, column and interval");
        }
        if let Signalization::Subset(ids) = &self.signalization {
            for id in ids {
                let ok = (0..self.rows).any(|r| (0..self.cols).any(|c| &Self::node_id(r, c) == id));
                if !ok {
                    return invalid(format!("subset names unknown intersection {id}"));
                }
            }
        }
        let (a, b) = self.low_range;
        let (c, d) = self.high_range;
        if a > b || c > d {
            return invalid("demand ranges must be ordered");
        }
        Ok(())
    }
}

/// Heading of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    E,
    S,
    W,
    N,
}

const DIRS: [Dir; 4] = [Dir::E, Dir::S, Dir::W, Dir::N];

impl Dir {
    fn tag(self) -> &'static str {
        match self {
            Dir::E => "E",
            Dir::S => "S",
            Dir::W => "W",
            Dir::N => "N",
        }
    }

    fn index(self) -> usize {
        DIRS.iter().position(|&d| d == self).unwrap()
    }
}

fn approach(d: Dir, r: usize, c: usize) -> String {
    format!("{}{r}_{c}", d.tag())
}

/// Link leaving (r, c) heading d: the next approach, or an exit link.
fn departure(g: &StudyGrid, d: Dir, r: usize, c: usize) -> String {
    match d {
        Dir::E if c + 1 < g.cols => approach(d, r, c + 1),
        Dir::W if c > 0 => approach(d, r, c - 1),
        Dir::S if r + 1 < g.rows => approach(d, r + 1, c),
        Dir::N if r > 0 => approach(d, r - 1, c),
        Dir::E | Dir::W => format!("x{}{r}", d.tag()),
        Dir::S | Dir::N => format!("x{}{c}", d.tag()),
    }
}

fn entries(g: &StudyGrid) -> Vec<(Dir, String)> {
    let mut v = Vec::new();
    for r in 0..g.rows {
        v.push((Dir::E, approach(Dir::E, r, 0)));
        v.push((Dir::W, approach(Dir::W, r, g.cols - 1)));
    }
    for c in 0..g.cols {
        v.push((Dir::S, approach(Dir::S, 0, c)));
        v.push((Dir::N, approach(Dir::N, g.rows - 1, c)));
    }
    v
}

/// Scenario document for one seeded draw. Demand depends on the seed and
/// level only, so every signalization sees the same arrivals.
pub fn grid_scenario_json(g: &StudyGrid, seed: u64) -> Result<String> {
    g.check()?;
    let length = g.free_speed * g.delta_s;
    let mut links = Vec::new();
    let mut signalized = Vec::new();
    let mut nonsignalized = Vec::new();
    for r in 0..g.rows {
        for c in 0..g.cols {
            for d in DIRS {
                links.push(json!({"id": approach(d, r, c), "length_m": length, "free_speed": g.free_speed}));
            }
            let stream = |d: Dir| json!([approach(d, r, c), departure(g, d, r, c)]);
            let id = StudyGrid::node_id(r, c);
            if g.is_signalized(r, c) {
                signalized.push(json!({"id": id, "stages": [
                    {"id": "NS", "streams": [stream(Dir::S), stream(Dir::N)]},
                    {"id": "EW", "streams": [stream(Dir::E), stream(Dir::W)]}
                ]}));
            } else {
                let approaches: Vec<_> = DIRS
                    .iter()
                    .map(|&d| json!({"link": approach(d, r, c), "sigma": d.index() + 1}))
                    .collect();
                let streams: Vec<_> = DIRS.iter().map(|&d| stream(d)).collect();
                nonsignalized.push(json!({"id": id, "approaches": approaches, "streams": streams}));
            }
        }
    }
    for r in 0..g.rows {
        for d in [Dir::E, Dir::W] {
            links.push(json!({"id": format!("x{}{r}", d.tag()), "length_m": length, "free_speed": g.free_speed}));
        }
    }
    for c in 0..g.cols {
        for d in [Dir::S, Dir::N] {
            links.push(json!({"id": format!("x{}{c}", d.tag()), "length_m": length, "free_speed": g.free_speed}));
        }
    }

    let m = (g.delta_s / g.lambda_s).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut demand = Vec::new();
    let all_entries = entries(g);
    for k in 0..g.intervals {
        for (d, link) in &all_entries {
            let heavy = match g.demand {
                DemandLevel::Low => false,
                DemandLevel::High => true,
                // Eastbound and southbound entries run heavy.
                DemandLevel::Medium => matches!(d, Dir::E | Dir::S),
            };
            // Draw both ranges every time so levels share one random stream.
            let light = rng.gen_range(g.low_range.0..=g.low_range.1);
            let dense = rng.gen_range(g.high_range.0..=g.high_range.1);
            let count = if heavy { dense } else { light };
            if count == 0 {
                continue;
            }
            // Each heading arrives on its own fine step of the interval.
            let step = k * m + d.index() % m.max(1);
            demand.push(json!({"link": link, "fine_step": step, "count": count}));
        }
    }

    let doc = json!({
        "links": links,
        "signalized": signalized,
        "nonsignalized": nonsignalized,
        "speed_levels": {"default": g.speed_levels},
        "demand": demand,
        "delta_s": g.delta_s,
        "lambda_s": g.lambda_s,
        "horizon": g.intervals,
    });
    Ok(serde_json::to_string_pretty(&doc).expect("json value serializes"))
}

pub fn grid_scenario(g: &StudyGrid, seed: u64) -> Result<(NetworkModel, ScenarioConfig)> {
    parse_scenario(&grid_scenario_json(g, seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub case: String,
    pub level: DemandLevel,
    pub signalized: usize,
    pub seed: u64,
    pub total_vehicles: u64,
    pub total_delay_s: f64,
    pub average_delay_s: f64,
    /// Window solves that stopped at a limit.
    pub limited_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatCell {
    pub row: usize,
    pub col: usize,
    pub id: String,
    /// Mean over intervals of vehicles left on the approaches after the
    /// interval's outflow.
    pub waiting: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub case: String,
    pub seed: u64,
    pub cells: Vec<HeatCell>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    pub heatmaps: Vec<Heatmap>,
}

pub fn case_name(g: &StudyGrid) -> String {
    let sig = match &g.signalization {
        Signalization::All => "all",
        Signalization::Subset(_) => "subset",
        Signalization::None => "none",
    };
    format!("{}-{}", g.demand.name(), sig)
}

/// Runs one case on one seed.
pub fn run_case(g: &StudyGrid, seed: u64, control: &SignalControl) -> Result<(StudyRow, Heatmap, Trajectory)> {
    let (net, sc) = grid_scenario(g, seed)?;
    let (traj, limited) = if net.signalized.is_empty() {
        (run_scenario(&net, &sc, &SignalPlan::new(Vec::new()))?, 0)
    } else {
        match control {
            SignalControl::Optimized(cfg) => {
                let out = receding_horizon_control(&net, &sc, cfg)?;
                let limited = out.limited_epochs();
                (out.trajectory, limited)
            }
            SignalControl::Cyclic => {
                let cfg = ControllerConfig::new(1);
                (run_scenario(&net, &sc, &cfg.cyclic_plan(&net, sc.horizon))?, 0)
            }
        }
    };
    let delay = total_delay(&traj, &net, sc.delta_s).total;
    let vehicles = traj.injected_total;
    let row = StudyRow {
        case: case_name(g),
        level: g.demand,
        signalized: net.signalized.len(),
        seed,
        total_vehicles: vehicles,
        total_delay_s: delay,
        average_delay_s: if vehicles > 0 { delay / vehicles as f64 } else { 0.0 },
        limited_epochs: limited,
    };
    let heat = heatmap(g, &net, &traj, seed);
    Ok((row, heat, traj))
}

fn heatmap(g: &StudyGrid, net: &NetworkModel, traj: &Trajectory, seed: u64) -> Heatmap {
    let n = traj.records.len().max(1) as f64;
    let mut cells = Vec::new();
    for r in 0..g.rows {
        for c in 0..g.cols {
            let mut left = 0u64;
            for d in DIRS {
                let i = net.link_index(&approach(d, r, c)).expect("grid link exists");
                for rec in &traj.records {
                    left += rec.volumes[i].saturating_sub(rec.outflow[i]) as u64;
                }
            }
            cells.push(HeatCell { row: r, col: c, id: StudyGrid::node_id(r, c), waiting: left as f64 / n });
        }
    }
    Heatmap { case: case_name(g), seed, cells }
}

/// Every (grid, seed) pair, spread over the available cores. Output order
/// follows the input order regardless of scheduling.
pub fn run_study(grids: &[StudyGrid], seeds: &[u64], control: &SignalControl) -> Result<StudyTable> {
    let jobs: Vec<(&StudyGrid, u64)> = grids.iter().flat_map(|g| seeds.iter().map(move |&s| (g, s))).collect();
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(jobs.len().max(1));
    let results: Vec<Result<(StudyRow, Heatmap, Trajectory)>> = if workers <= 1 {
        jobs.iter().map(|&(g, s)| run_case(g, s, control)).collect()
    } else {
        let mut slots: Vec<Option<Result<(StudyRow, Heatmap, Trajectory)>>> = (0..jobs.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let chunks: Vec<_> = slots.chunks_mut(jobs.len().div_ceil(workers)).collect();
            let mut start = 0;
            for chunk in chunks {
                let mine = &jobs[start..start + chunk.len()];
                start += chunk.len();
                scope.spawn(move || {
                    for (slot, &(g, s)) in chunk.iter_mut().zip(mine) {
                        *slot = Some(run_case(g, s, control));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every job ran")).collect()
    };
    let mut table = StudyTable::default();
    for r in results {
        let (row, heat, _) = r?;
        table.rows.push(row);
        table.heatmaps.push(heat);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_eighty_links_and_sixteen_nodes() {
        let g = StudyGrid::new(Signalization::Subset(StudyGrid::default_subset(4, 4)), DemandLevel::Low);
        let (net, _) = grid_scenario(&g, 1).unwrap();
        assert_eq!(net.links.len(), 80);
        assert_eq!(net.signalized.len(), 9);
        assert_eq!(net.nonsignalized.len(), 7);
        assert_eq!(net.streams.len(), 64);
        assert!(net.links.iter().all(|l| l.free_travel_s() == 15.0));
    }

    #[test]
    fn same_seed_same_demand_across_signalizations() {
        let a = StudyGrid::new(Signalization::All, DemandLevel::High);
        let b = StudyGrid::new(Signalization::None, DemandLevel::High);
        let (_, sa) = grid_scenario(&a, 7).unwrap();
        let (_, sb) = grid_scenario(&b, 7).unwrap();
        assert_eq!(sa.demand, sb.demand);
        let (_, sc) = grid_scenario(&a, 8).unwrap();
        assert_ne!(sa.demand, sc.demand);
    }

    #[test]
    fn low_and_high_draws_stay_in_range() {
        for level in [DemandLevel::Low, DemandLevel::High] {
            let g = StudyGrid::new(Signalization::None, level);
            let (_, sc) = grid_scenario(&g, 3).unwrap();
            let (lo, hi) = if level == DemandLevel::Low { g.low_range } else { g.high_range };
            assert!(sc.demand.iter().all(|d| d.count >= lo.max(1) && d.count <= hi));
        }
    }

    #[test]
    fn unknown_subset_ids_are_refused() {
        let g = StudyGrid::new(Signalization::Subset(vec!["I9_9".into()]), DemandLevel::Low);
        assert!(grid_scenario(&g, 0).is_err());
    }
}
