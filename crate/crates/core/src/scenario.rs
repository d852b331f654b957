//! Scenario file schema, conversion into the network model and validation.

use crate::error::{Error, Result};
use crate::network::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    /// Give-way flow limited to the space left after priority flow.
    #[default]
    Inequality,
    /// Any priority flow blocks the give-way stream entirely.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemandTime {
    Interval(usize),
    FineStep(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demand {
    pub link: usize,
    pub when: DemandTime,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitialState {
    /// Per link. For segmented links this is ignored in favour of `segments`.
    pub volumes: Vec<u32>,
    /// Per link, empty for coarse links.
    pub segments: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub delta_s: f64,
    pub lambda_s: f64,
    pub horizon: usize,
    pub demand: Vec<Demand>,
    /// γ per stream per interval.
    pub gamma: Vec<Vec<f64>>,
    pub merge_mode: MergeMode,
    pub initial: InitialState,
}

impl ScenarioConfig {
    /// m with Δ = m·λ. Returns `None` when Δ is not an integer multiple of λ.
    pub fn fine_steps(&self) -> Option<usize> {
        if !(self.delta_s > 0.0 && self.lambda_s > 0.0) {
            return None;
        }
        let m = self.delta_s / self.lambda_s;
        let r = m.round();
        if r >= 1.0 && (m - r).abs() < 1e-9 {
            Some(r as usize)
        } else {
            None
        }
    }

    pub fn m(&self) -> usize {
        self.fine_steps().unwrap_or(1)
    }

    /// γ for a stream at interval k; intervals past the horizon reuse the last.
    pub fn gamma(&self, stream: usize, k: usize) -> f64 {
        let g = &self.gamma[stream];
        if g.is_empty() {
            0.0
        } else {
            g[k.min(g.len() - 1)]
        }
    }

    /// Total demand arriving at `link` in coarse interval k, counting fine-step
    /// entries that fall inside it.
    pub fn demand_in_interval(&self, link: usize, k: usize) -> u64 {
        let m = self.m();
        self.demand
            .iter()
            .filter(|d| d.link == link)
            .filter(|d| match d.when {
                DemandTime::Interval(i) => i == k,
                DemandTime::FineStep(t) => t / m == k,
            })
            .map(|d| d.count as u64)
            .sum()
    }

    pub fn total_demand(&self) -> u64 {
        self.demand.iter().map(|d| d.count as u64).sum()
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        let mut s = self.clone();
        if horizon > s.horizon {
            for g in s.gamma.iter_mut() {
                let last = g.last().copied().unwrap_or(0.0);
                g.resize(horizon, last);
            }
        }
        s.horizon = horizon;
        s
    }
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub signalized: Vec<SignalizedSpec>,
    #[serde(default)]
    pub nonsignalized: Vec<NonSignalizedSpec>,
    #[serde(default)]
    pub speed_levels: SpeedLevelsSpec,
    #[serde(default)]
    pub demand: Vec<DemandSpec>,
    #[serde(default)]
    pub turning_ratios: Vec<TurningSpec>,
    pub delta_s: f64,
    pub lambda_s: f64,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle_length_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_separation_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_mode: Option<MergeMode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial: Vec<InitialSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    pub length_m: f64,
    pub free_speed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_density: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub id: String,
    pub streams: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrioritySpec {
    pub from: String,
    pub to: String,
    pub rank: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalizedSpec {
    pub id: String,
    pub stages: Vec<StageSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub priority: Vec<PrioritySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproachSpec {
    pub link: String,
    pub sigma: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonSignalizedSpec {
    pub id: String,
    pub approaches: Vec<ApproachSpec>,
    pub streams: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamLevelsSpec {
    pub from: String,
    pub to: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedLevelsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub streams: Vec<StreamLevelsSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    pub link: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_step: Option<usize>,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurningSpec {
    pub from: String,
    pub to: String,
    pub ratio: f64,
    /// Absent means every interval; specific entries override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub link: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<u32>>,
}

fn parse_level(s: &str) -> Result<Level> {
    s.trim()
        .parse::<Level>()
        .map_err(|e| Error::Parse(format!("bad speed level {s:?}: {e}")))
}

fn level_string(l: &Level) -> String {
    if *l.denom() == 1 {
        l.numer().to_string()
    } else {
        format!("{}/{}", l.numer(), l.denom())
    }
}

pub fn parse_scenario(text: &str) -> Result<(NetworkModel, ScenarioConfig)> {
    let file: ScenarioFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.build()
}

pub fn serialize_scenario(net: &NetworkModel, sc: &ScenarioConfig) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from_model(net, sc)).expect("scenario serializes")
}

impl ScenarioFile {
    pub fn build(&self) -> Result<(NetworkModel, ScenarioConfig)> {
        let veh = self.vehicle_length_m.unwrap_or(DEFAULT_VEHICLE_LENGTH_M);
        let sep = self.min_separation_m.unwrap_or(DEFAULT_MIN_SEPARATION_M);

        let mut index = HashMap::new();
        for (i, l) in self.links.iter().enumerate() {
            if index.insert(l.id.clone(), i).is_some() {
                return Err(Error::Parse(format!("duplicate link id {:?}", l.id)));
            }
        }
        let lookup = |id: &str| -> Result<usize> {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::Parse(format!("unknown link id {id:?}")))
        };

        let mut links: Vec<Link> = self
            .links
            .iter()
            .map(|l| Link {
                id: l.id.clone(),
                length_m: l.length_m,
                free_speed: l.free_speed,
                max_density: l.max_density.unwrap_or(1.0 / (veh + sep)),
                capacity: link_capacity(l.length_m, veh, sep).unwrap_or(0),
                segment_count: 0,
                segment_capacities: Vec::new(),
                upstream: Node::Boundary,
                downstream: Node::Boundary,
            })
            .collect();

        let default_levels = match &self.speed_levels.default {
            Some(v) => Some(SpeedLevelTable {
                levels: v.iter().map(|s| parse_level(s)).collect::<Result<_>>()?,
            }),
            None => None,
        };
        let mut explicit_levels = HashMap::new();
        for s in &self.speed_levels.streams {
            let key = (lookup(&s.from)?, lookup(&s.to)?);
            let t = SpeedLevelTable {
                levels: s.levels.iter().map(|x| parse_level(x)).collect::<Result<_>>()?,
            };
            explicit_levels.insert(key, t);
        }

        let mut streams: Vec<Stream> = Vec::new();
        let mut signalized = Vec::new();
        for (j, spec) in self.signalized.iter().enumerate() {
            let node = Node::Signalized(j);
            let mut stages = Vec::new();
            let mut own = Vec::new();
            for st in &spec.stages {
                let mut ids = Vec::new();
                for (a, b) in &st.streams {
                    let (from, to) = (lookup(a)?, lookup(b)?);
                    let existing = own
                        .iter()
                        .copied()
                        .find(|&s: &usize| streams[s].from == from && streams[s].to == to);
                    let s = match existing {
                        Some(s) => s,
                        None => {
                            let levels = explicit_levels
                                .get(&(from, to))
                                .cloned()
                                .or_else(|| default_levels.clone());
                            if levels.is_none() {
                                return Err(Error::Parse(format!(
                                    "stream {a}->{b} has no speed levels and no default is given"
                                )));
                            }
                            streams.push(Stream {
                                from,
                                to,
                                node,
                                priority: own.len() as u32 + 1,
                                levels,
                            });
                            own.push(streams.len() - 1);
                            streams.len() - 1
                        }
                    };
                    ids.push(s);
                }
                stages.push(Stage { id: st.id.clone(), streams: ids });
            }
            for p in &spec.priority {
                let (from, to) = (lookup(&p.from)?, lookup(&p.to)?);
                let s = own
                    .iter()
                    .copied()
                    .find(|&s| streams[s].from == from && streams[s].to == to)
                    .ok_or_else(|| {
                        Error::Parse(format!(
                            "priority for {}->{} which is not a stream of {}",
                            p.from, p.to, spec.id
                        ))
                    })?;
                streams[s].priority = p.rank;
            }
            for &s in &own {
                let (from, to) = (streams[s].from, streams[s].to);
                if links[from].downstream == Node::Boundary {
                    links[from].downstream = node;
                }
                if links[to].upstream == Node::Boundary {
                    links[to].upstream = node;
                }
            }
            signalized.push(SignalizedIntersection {
                id: spec.id.clone(),
                stages,
                streams: own,
            });
        }

        let mut nonsignalized = Vec::new();
        for (j, spec) in self.nonsignalized.iter().enumerate() {
            let node = Node::NonSignalized(j);
            let mut members = Vec::new();
            let mut sigma = Vec::new();
            for a in &spec.approaches {
                let l = lookup(&a.link)?;
                members.push(l);
                sigma.push(a.sigma);
                if links[l].downstream == Node::Boundary {
                    links[l].downstream = node;
                }
            }
            let mut own = Vec::new();
            for (p, (a, b)) in spec.streams.iter().enumerate() {
                let (from, to) = (lookup(a)?, lookup(b)?);
                streams.push(Stream {
                    from,
                    to,
                    node,
                    priority: p as u32 + 1,
                    levels: None,
                });
                own.push(streams.len() - 1);
                if links[to].upstream == Node::Boundary {
                    links[to].upstream = node;
                }
            }
            let mut groups: Vec<Vec<usize>> = Vec::new();
            for g in &spec.groups {
                groups.push(g.iter().map(|x| lookup(x)).collect::<Result<_>>()?);
            }
            for &m in &members {
                if !groups.iter().any(|g| g.contains(&m)) {
                    groups.push(vec![m]);
                }
            }
            nonsignalized.push(NonSignalizedIntersection {
                id: spec.id.clone(),
                members,
                sigma,
                groups,
                streams: own,
            });
        }

        for l in links.iter_mut() {
            if l.is_fine() {
                let p = partition_link(l.length_m, l.free_speed, self.lambda_s)?;
                l.segment_count = p.count;
                l.segment_capacities = p.capacities(veh, sep)?;
            }
        }

        let net = NetworkModel::new(links, streams, signalized, nonsignalized, veh, sep);

        // γ: per-stream default, then per-interval overrides.
        let n = self.horizon;
        let mut gamma = vec![vec![f64::NAN; n]; net.streams.len()];
        let mut seen = HashSet::new();
        for pass in 0..2 {
            for t in &self.turning_ratios {
                if (pass == 0) != t.interval.is_none() {
                    continue;
                }
                let (from, to) = (lookup(&t.from)?, lookup(&t.to)?);
                let s = net.stream_index(from, to).ok_or_else(|| {
                    Error::Parse(format!("turning ratio for undeclared stream {}->{}", t.from, t.to))
                })?;
                seen.insert(s);
                match t.interval {
                    None => gamma[s].iter_mut().for_each(|g| *g = t.ratio),
                    Some(k) if k < n => gamma[s][k] = t.ratio,
                    Some(k) => {
                        return Err(Error::Parse(format!(
                            "turning ratio interval {k} beyond horizon {n}"
                        )))
                    }
                }
            }
        }
        for (s, g) in gamma.iter_mut().enumerate() {
            let single = net.out_streams(net.streams[s].from).len() == 1;
            for x in g.iter_mut() {
                if x.is_nan() {
                    *x = if single && !seen.contains(&s) { 1.0 } else { 0.0 };
                }
            }
        }

        let mut demand = Vec::new();
        for d in &self.demand {
            let when = match (d.interval, d.fine_step) {
                (Some(k), None) => DemandTime::Interval(k),
                (None, Some(t)) => DemandTime::FineStep(t),
                _ => {
                    return Err(Error::Parse(format!(
                        "demand entry for {} needs exactly one of interval / fine_step",
                        d.link
                    )))
                }
            };
            demand.push(Demand { link: lookup(&d.link)?, when, count: d.count });
        }

        let mut initial = InitialState {
            volumes: vec![0; net.links.len()],
            segments: net.links.iter().map(|l| vec![0; l.segment_count]).collect(),
        };
        for s in &self.initial {
            let l = lookup(&s.link)?;
            if let Some(v) = s.volume {
                initial.volumes[l] = v;
            }
            if let Some(seg) = &s.segments {
                if seg.len() != net.links[l].segment_count {
                    return Err(Error::Parse(format!(
                        "initial segments for {} has {} entries, link has {} segments",
                        s.link,
                        seg.len(),
                        net.links[l].segment_count
                    )));
                }
                initial.segments[l] = seg.clone();
            }
        }
        for (l, link) in net.links.iter().enumerate() {
            if link.is_fine() {
                initial.volumes[l] = initial.segments[l].iter().sum();
            }
        }

        let sc = ScenarioConfig {
            delta_s: self.delta_s,
            lambda_s: self.lambda_s,
            horizon: n,
            demand,
            gamma,
            merge_mode: self.merge_mode.unwrap_or_default(),
            initial,
        };
        Ok((net, sc))
    }

    pub fn from_model(net: &NetworkModel, sc: &ScenarioConfig) -> Self {
        let id = |l: usize| net.links[l].id.clone();
        let links = net
            .links
            .iter()
            .map(|l| LinkSpec {
                id: l.id.clone(),
                length_m: l.length_m,
                free_speed: l.free_speed,
                max_density: Some(l.max_density),
            })
            .collect();
        let signalized = net
            .signalized
            .iter()
            .map(|j| SignalizedSpec {
                id: j.id.clone(),
                stages: j
                    .stages
                    .iter()
                    .map(|w| StageSpec {
                        id: w.id.clone(),
                        streams: w
                            .streams
                            .iter()
                            .map(|&s| (id(net.streams[s].from), id(net.streams[s].to)))
                            .collect(),
                    })
                    .collect(),
                priority: j
                    .streams
                    .iter()
                    .map(|&s| PrioritySpec {
                        from: id(net.streams[s].from),
                        to: id(net.streams[s].to),
                        rank: net.streams[s].priority,
                    })
                    .collect(),
            })
            .collect();
        let nonsignalized = net
            .nonsignalized
            .iter()
            .map(|j| NonSignalizedSpec {
                id: j.id.clone(),
                approaches: j
                    .members
                    .iter()
                    .zip(&j.sigma)
                    .map(|(&l, &s)| ApproachSpec { link: id(l), sigma: s })
                    .collect(),
                streams: j
                    .streams
                    .iter()
                    .map(|&s| (id(net.streams[s].from), id(net.streams[s].to)))
                    .collect(),
                groups: j.groups.iter().map(|g| g.iter().map(|&l| id(l)).collect()).collect(),
            })
            .collect();
        let speed_levels = SpeedLevelsSpec {
            default: None,
            streams: net
                .streams
                .iter()
                .filter_map(|s| {
                    s.levels.as_ref().map(|t| StreamLevelsSpec {
                        from: id(s.from),
                        to: id(s.to),
                        levels: t.levels.iter().map(level_string).collect(),
                    })
                })
                .collect(),
        };
        let demand = sc
            .demand
            .iter()
            .map(|d| DemandSpec {
                link: id(d.link),
                interval: match d.when {
                    DemandTime::Interval(k) => Some(k),
                    _ => None,
                },
                fine_step: match d.when {
                    DemandTime::FineStep(t) => Some(t),
                    _ => None,
                },
                count: d.count,
            })
            .collect();
        let mut turning_ratios = Vec::new();
        for (s, g) in sc.gamma.iter().enumerate() {
            for (k, &r) in g.iter().enumerate() {
                turning_ratios.push(TurningSpec {
                    from: id(net.streams[s].from),
                    to: id(net.streams[s].to),
                    ratio: r,
                    interval: Some(k),
                });
            }
        }
        let mut initial = Vec::new();
        for (l, link) in net.links.iter().enumerate() {
            if link.is_fine() {
                if sc.initial.segments[l].iter().any(|&v| v > 0) {
                    initial.push(InitialSpec {
                        link: id(l),
                        volume: None,
                        segments: Some(sc.initial.segments[l].clone()),
                    });
                }
            } else if sc.initial.volumes[l] > 0 {
                initial.push(InitialSpec { link: id(l), volume: Some(sc.initial.volumes[l]), segments: None });
            }
        }
        ScenarioFile {
            links,
            signalized,
            nonsignalized,
            speed_levels,
            demand,
            turning_ratios,
            delta_s: sc.delta_s,
            lambda_s: sc.lambda_s,
            horizon: sc.horizon,
            vehicle_length_m: Some(net.vehicle_length_m),
            min_separation_m: Some(net.min_separation_m),
            merge_mode: Some(sc.merge_mode),
            initial,
        }
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Sampling,
    LinkParameter,
    StageOverlap,
    UnstagedStream,
    SigmaCollision,
    Grouping,
    Topology,
    TurningRatio,
    Demand,
    SpeedLevels,
    InitialState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub link: Option<String>,
    pub interval: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.kind)?;
        if let Some(l) = &self.link {
            write!(f, " [link {l}]")?;
        }
        if let Some(k) = self.interval {
            write!(f, " [k={k}]")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation {
                count: self.violations.len(),
                summary: self
                    .violations
                    .iter()
                    .take(5)
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; "),
            })
        }
    }

    fn push(&mut self, kind: ViolationKind, link: Option<&str>, interval: Option<usize>, msg: String) {
        self.violations.push(Violation {
            kind,
            link: link.map(str::to_string),
            interval,
            message: msg,
        });
    }
}

pub fn validate_network(net: &NetworkModel, sc: &ScenarioConfig) -> ValidationReport {
    use ViolationKind::*;
    let mut rep = ValidationReport::default();
    if sc.fine_steps().is_none() {
        rep.push(
            Sampling,
            None,
            None,
            format!("delta_s = {} is not a positive integer multiple of lambda_s = {}", sc.delta_s, sc.lambda_s),
        );
    }

    for l in &net.links {
        if !(l.length_m > 0.0 && l.free_speed > 0.0 && l.max_density > 0.0) {
            rep.push(LinkParameter, Some(&l.id), None, "length, free speed and max density must be positive".into());
        } else if l.capacity == 0 {
            rep.push(LinkParameter, Some(&l.id), None, "link too short to hold one vehicle".into());
        }
        if l.is_fine() && (l.segment_count == 0 || l.segment_capacities.iter().any(|&c| c == 0)) {
            rep.push(LinkParameter, Some(&l.id), None, "segment too short to hold one vehicle".into());
        }
    }

    for j in &net.signalized {
        for (a, wa) in j.stages.iter().enumerate() {
            for wb in &j.stages[a + 1..] {
                for s in &wa.streams {
                    if wb.streams.contains(s) {
                        rep.push(
                            StageOverlap,
                            None,
                            None,
                            format!("{}: stream {} in stages {} and {}", j.id, net.stream_name(*s), wa.id, wb.id),
                        );
                    }
                }
            }
        }
        for &s in &j.streams {
            if j.stage_of(s).is_none() {
                rep.push(UnstagedStream, None, None, format!("{}: stream {} in no stage", j.id, net.stream_name(s)));
            }
        }
        if j.stages.is_empty() {
            rep.push(Topology, None, None, format!("{} has no stages", j.id));
        }
    }

    for j in &net.nonsignalized {
        let mut seen: HashMap<u32, usize> = HashMap::new();
        for (p, &s) in j.sigma.iter().enumerate() {
            if let Some(q) = seen.insert(s, p) {
                rep.push(
                    SigmaCollision,
                    Some(&net.links[j.members[p]].id),
                    None,
                    format!("{}: links {} and {} share sigma {s}", j.id, net.links[j.members[q]].id, net.links[j.members[p]].id),
                );
            }
        }
        let mut counted = HashSet::new();
        for g in &j.groups {
            for &l in g {
                if !j.members.contains(&l) {
                    rep.push(Grouping, Some(&net.links[l].id), None, format!("{}: group member is not an approach", j.id));
                } else if !counted.insert(l) {
                    rep.push(Grouping, Some(&net.links[l].id), None, format!("{}: approach in two groups", j.id));
                }
            }
        }
        if j.members.is_empty() {
            rep.push(Topology, None, None, format!("{} has no approaches", j.id));
        }
    }

    for (s, st) in net.streams.iter().enumerate() {
        let (from, to) = (&net.links[st.from], &net.links[st.to]);
        if from.downstream != st.node {
            rep.push(
                Topology,
                Some(&from.id),
                None,
                format!("stream {} leaves a link that feeds a different intersection", net.stream_name(s)),
            );
        }
        if to.upstream != st.node {
            rep.push(
                Topology,
                Some(&to.id),
                None,
                format!("stream {} enters a link fed by a different intersection", net.stream_name(s)),
            );
        }
        if st.from == st.to {
            rep.push(Topology, Some(&from.id), None, "stream loops onto its own link".into());
        }
        if let Some(t) = &st.levels {
            if let Err(e) = t.check() {
                rep.push(SpeedLevels, Some(&from.id), None, format!("{}: {e}", net.stream_name(s)));
            }
        }
        if let Node::NonSignalized(j) = st.node {
            if !net.nonsignalized[j].members.contains(&st.from) {
                rep.push(Topology, Some(&from.id), None, format!("stream {} starts outside the approaches", net.stream_name(s)));
            }
        }
    }
    for (l, link) in net.links.iter().enumerate() {
        if !link.is_exit() && net.out_streams(l).is_empty() {
            rep.push(Topology, Some(&link.id), None, "approach link with no outgoing stream".into());
        }
    }

    for (l, link) in net.links.iter().enumerate() {
        let outs = net.out_streams(l);
        if outs.is_empty() {
            continue;
        }
        for k in 0..sc.horizon {
            let mut sum = 0.0;
            for &s in outs {
                let g = sc.gamma.get(s).and_then(|g| g.get(k)).copied().unwrap_or(f64::NAN);
                if !(0.0..=1.0).contains(&g) {
                    rep.push(TurningRatio, Some(&link.id), Some(k), format!("ratio {g} for {} outside [0, 1]", net.stream_name(s)));
                }
                sum += g;
            }
            if (sum - 1.0).abs() > 1e-9 {
                rep.push(TurningRatio, Some(&link.id), Some(k), format!("turning ratios sum to {sum}"));
            }
        }
    }

    let m = sc.m();
    for d in &sc.demand {
        let link = &net.links[d.link];
        if !link.is_entry() {
            rep.push(Demand, Some(&link.id), None, "demand on a link that is not a network entry".into());
        }
        let (k, late) = match d.when {
            DemandTime::Interval(k) => (k, k >= sc.horizon),
            DemandTime::FineStep(t) => (t / m, t >= sc.horizon * m),
        };
        if late {
            rep.push(Demand, Some(&link.id), Some(k), "demand beyond the horizon".into());
        }
    }

    if sc.initial.volumes.len() != net.links.len() || sc.initial.segments.len() != net.links.len() {
        rep.push(InitialState, None, None, "initial state does not cover every link".into());
    } else {
        for (l, link) in net.links.iter().enumerate() {
            if link.is_fine() {
                let seg = &sc.initial.segments[l];
                if seg.len() != link.segment_count {
                    rep.push(InitialState, Some(&link.id), None, "segment count mismatch".into());
                    continue;
                }
                for (j, (&v, &c)) in seg.iter().zip(&link.segment_capacities).enumerate() {
                    if v > c {
                        rep.push(InitialState, Some(&link.id), None, format!("segment {j} holds {v} > {c}"));
                    }
                }
            } else if sc.initial.volumes[l] > link.capacity {
                rep.push(InitialState, Some(&link.id), None, format!("volume {} > capacity {}", sc.initial.volumes[l], link.capacity));
            }
        }
    }
    if sc.gamma.len() != net.streams.len() {
        rep.push(TurningRatio, None, None, "turning ratios do not cover every stream".into());
    }
    rep
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const TWO_INTERSECTIONS: &str = r#"{
        "links": [
            {"id": "in1", "length_m": 200, "free_speed": 10},
            {"id": "in2", "length_m": 200, "free_speed": 10},
            {"id": "mid", "length_m": 200, "free_speed": 10},
            {"id": "out1", "length_m": 100, "free_speed": 10},
            {"id": "out2", "length_m": 100, "free_speed": 10}
        ],
        "signalized": [{"id": "J1", "stages": [
            {"id": "A", "streams": [["in1", "mid"]]},
            {"id": "B", "streams": [["in2", "out2"]]}
        ]}],
        "nonsignalized": [{"id": "N1", "approaches": [{"link": "mid", "sigma": 1}],
                           "streams": [["mid", "out1"]]}],
        "speed_levels": {"default": ["1", "3/4", "1/2"]},
        "demand": [{"link": "in1", "interval": 0, "count": 4}],
        "turning_ratios": [],
        "delta_s": 15, "lambda_s": 5, "horizon": 4
    }"#;

    #[test]
    fn parses_and_validates() {
        let (net, sc) = parse_scenario(TWO_INTERSECTIONS).unwrap();
        assert_eq!(net.links.len(), 5);
        let mid = net.link_index("mid").unwrap();
        assert!(net.links[mid].is_fine());
        assert_eq!(net.links[mid].segment_count, 4);
        assert_eq!(net.links[0].capacity, 33);
        assert_eq!(sc.m(), 3);
        let rep = validate_network(&net, &sc);
        assert!(rep.is_empty(), "{:?}", rep);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = TWO_INTERSECTIONS.replacen("\"horizon\": 4", "\"horizon\": 4, \"colour\": 1", 1);
        assert!(matches!(parse_scenario(&text), Err(Error::Parse(_))));
        let text = TWO_INTERSECTIONS.replacen("\"free_speed\": 10}", "\"free_speed\": 10, \"lanes\": 2}", 1);
        assert!(parse_scenario(&text).is_err());
    }

    #[test]
    fn round_trip_is_identical() {
        let (net, sc) = parse_scenario(TWO_INTERSECTIONS).unwrap();
        let text = serialize_scenario(&net, &sc);
        let (net2, sc2) = parse_scenario(&text).unwrap();
        assert_eq!(net, net2);
        assert_eq!(sc, sc2);
    }

    #[test]
    fn ratio_sum_violation_names_link_and_interval() {
        let text = r#"{
            "links": [
                {"id": "a", "length_m": 200, "free_speed": 10},
                {"id": "b", "length_m": 200, "free_speed": 10},
                {"id": "c", "length_m": 200, "free_speed": 10}
            ],
            "signalized": [{"id": "J", "stages": [{"id": "s", "streams": [["a", "b"], ["a", "c"]]}]}],
            "speed_levels": {"default": ["1"]},
            "turning_ratios": [
                {"from": "a", "to": "b", "ratio": 0.5},
                {"from": "a", "to": "c", "ratio": 0.5},
                {"from": "a", "to": "c", "ratio": 0.4, "interval": 2}
            ],
            "delta_s": 10, "lambda_s": 5, "horizon": 4
        }"#;
        let (net, sc) = parse_scenario(text).unwrap();
        let rep = validate_network(&net, &sc);
        assert_eq!(rep.violations.len(), 1, "{:?}", rep);
        let v = &rep.violations[0];
        assert_eq!(v.kind, ViolationKind::TurningRatio);
        assert_eq!(v.link.as_deref(), Some("a"));
        assert_eq!(v.interval, Some(2));
    }

    #[test]
    fn sigma_collision_detected() {
        let text = r#"{
            "links": [
                {"id": "a", "length_m": 100, "free_speed": 10},
                {"id": "b", "length_m": 100, "free_speed": 10},
                {"id": "x", "length_m": 100, "free_speed": 10},
                {"id": "y", "length_m": 100, "free_speed": 10}
            ],
            "nonsignalized": [{"id": "N", "approaches": [{"link": "a", "sigma": 1}, {"link": "b", "sigma": 1}],
                               "streams": [["a", "x"], ["b", "y"]]}],
            "delta_s": 10, "lambda_s": 5, "horizon": 2
        }"#;
        let (net, sc) = parse_scenario(text).unwrap();
        let rep = validate_network(&net, &sc);
        assert!(rep.violations.iter().any(|v| v.kind == ViolationKind::SigmaCollision), "{:?}", rep);
    }

    #[test]
    fn overlapping_stages_and_bad_sampling() {
        let text = r#"{
            "links": [
                {"id": "a", "length_m": 200, "free_speed": 10},
                {"id": "b", "length_m": 200, "free_speed": 10}
            ],
            "signalized": [{"id": "J", "stages": [
                {"id": "s1", "streams": [["a", "b"]]},
                {"id": "s2", "streams": [["a", "b"]]}]}],
            "speed_levels": {"default": ["1"]},
            "delta_s": 10, "lambda_s": 3, "horizon": 2
        }"#;
        let (net, sc) = parse_scenario(text).unwrap();
        let rep = validate_network(&net, &sc);
        let kinds: Vec<_> = rep.violations.iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::StageOverlap), "{kinds:?}");
        assert!(kinds.contains(&ViolationKind::Sampling), "{kinds:?}");
    }
}
