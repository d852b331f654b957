//! Static network topology: links, segments, intersections, streams and
//! speed-level tables.

use crate::error::{invalid, Result};
use num_rational::Ratio;
use std::collections::HashMap;

/// Speed-level coefficient, kept exact so halving and flooring reproduce bit for bit.
pub type Level = Ratio<i64>;

pub const DEFAULT_VEHICLE_LENGTH_M: f64 = 5.0;
pub const DEFAULT_MIN_SEPARATION_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Signalized(usize),
    NonSignalized(usize),
    /// Network edge: an entry point upstream or an exit downstream.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Updated once per coarse interval Δ.
    Coarse,
    /// Feeds an all-way-stop intersection; updated every λ in segments.
    Fine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub length_m: f64,
    pub free_speed: f64,
    pub max_density: f64,
    pub capacity: u32,
    /// Zero for coarse links.
    pub segment_count: usize,
    /// Index 0 touches the downstream intersection.
    pub segment_capacities: Vec<u32>,
    pub upstream: Node,
    pub downstream: Node,
}

impl Link {
    pub fn sampling(&self) -> Sampling {
        if matches!(self.downstream, Node::NonSignalized(_)) {
            Sampling::Fine
        } else {
            Sampling::Coarse
        }
    }

    pub fn is_fine(&self) -> bool {
        self.sampling() == Sampling::Fine
    }

    pub fn is_entry(&self) -> bool {
        self.upstream == Node::Boundary
    }

    pub fn is_exit(&self) -> bool {
        self.downstream == Node::Boundary
    }

    /// Vehicles the link can hold in the dynamics. Segmented links hold the
    /// sum of their segment capacities.
    pub fn holding_capacity(&self) -> u32 {
        if self.is_fine() {
            self.segment_capacities.iter().sum()
        } else {
            self.capacity
        }
    }

    /// Free-flow traversal time in seconds.
    pub fn free_travel_s(&self) -> f64 {
        self.length_m / self.free_speed
    }

    /// v*·d*·τ, the free-flow discharge over a period of `period_s` seconds.
    pub fn discharge(&self, period_s: f64) -> f64 {
        self.free_speed * self.max_density * period_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedLevelTable {
    /// l^0 ≥ l^1 ≥ … ≥ l^r, so `levels.len() == r + 1`.
    pub levels: Vec<Level>,
}

impl SpeedLevelTable {
    pub fn new(levels: Vec<Level>) -> Result<Self> {
        let t = SpeedLevelTable { levels };
        t.check()?;
        Ok(t)
    }

    pub fn memory_depth(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    pub fn check(&self) -> Result<()> {
        if self.levels.is_empty() {
            return invalid("speed-level table is empty");
        }
        let zero = Level::from_integer(0);
        let one = Level::from_integer(1);
        for (p, l) in self.levels.iter().enumerate() {
            if *l <= zero || *l > one {
                return invalid(format!("speed level l^{p} = {l} outside (0, 1]"));
            }
            if p > 0 && self.levels[p - 1] < *l {
                return invalid(format!("speed levels increase at l^{p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub from: usize,
    pub to: usize,
    pub node: Node,
    /// Lower value means higher priority.
    pub priority: u32,
    /// Present for streams through signalized intersections.
    pub levels: Option<SpeedLevelTable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub id: String,
    pub streams: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalizedIntersection {
    pub id: String,
    pub stages: Vec<Stage>,
    pub streams: Vec<usize>,
}

impl SignalizedIntersection {
    pub fn stage_of(&self, stream: usize) -> Option<usize> {
        self.stages.iter().position(|s| s.streams.contains(&stream))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonSignalizedIntersection {
    pub id: String,
    /// Approach links, parallel to `sigma`.
    pub members: Vec<usize>,
    pub sigma: Vec<u32>,
    /// Approach groups sharing one virtual green. Each entry lists link
    /// indices; ungrouped approaches form singletons.
    pub groups: Vec<Vec<usize>>,
    pub streams: Vec<usize>,
}

impl NonSignalizedIntersection {
    pub fn sigma_of(&self, link: usize) -> Option<u32> {
        self.members.iter().position(|&m| m == link).map(|p| self.sigma[p])
    }

    /// A group is ranked by the smallest σ among its members.
    pub fn group_sigma(&self, g: usize) -> u32 {
        self.groups[g]
            .iter()
            .filter_map(|&l| self.sigma_of(l))
            .min()
            .unwrap_or(u32::MAX)
    }

    pub fn group_of(&self, link: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&link))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub links: Vec<Link>,
    pub streams: Vec<Stream>,
    pub signalized: Vec<SignalizedIntersection>,
    pub nonsignalized: Vec<NonSignalizedIntersection>,
    pub vehicle_length_m: f64,
    pub min_separation_m: f64,
    index: HashMap<String, usize>,
    out_streams: Vec<Vec<usize>>,
    in_streams: Vec<Vec<usize>>,
}

impl NetworkModel {
    pub fn new(
        links: Vec<Link>,
        streams: Vec<Stream>,
        signalized: Vec<SignalizedIntersection>,
        nonsignalized: Vec<NonSignalizedIntersection>,
        vehicle_length_m: f64,
        min_separation_m: f64,
    ) -> Self {
        let index = links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.clone(), i))
            .collect();
        let mut out_streams = vec![Vec::new(); links.len()];
        let mut in_streams = vec![Vec::new(); links.len()];
        for (s, st) in streams.iter().enumerate() {
            if st.from < links.len() {
                out_streams[st.from].push(s);
            }
            if st.to < links.len() {
                in_streams[st.to].push(s);
            }
        }
        NetworkModel {
            links,
            streams,
            signalized,
            nonsignalized,
            vehicle_length_m,
            min_separation_m,
            index,
            out_streams,
            in_streams,
        }
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn out_streams(&self, link: usize) -> &[usize] {
        &self.out_streams[link]
    }

    pub fn in_streams(&self, link: usize) -> &[usize] {
        &self.in_streams[link]
    }

    pub fn stream_index(&self, from: usize, to: usize) -> Option<usize> {
        self.out_streams[from]
            .iter()
            .copied()
            .find(|&s| self.streams[s].to == to)
    }

    /// Stage index of a signalized stream, with its intersection.
    pub fn stream_stage(&self, stream: usize) -> Option<(usize, usize)> {
        match self.streams[stream].node {
            Node::Signalized(j) => self.signalized[j].stage_of(stream).map(|w| (j, w)),
            _ => None,
        }
    }

    pub fn max_capacity(&self) -> u32 {
        self.links.iter().map(|l| l.capacity.max(l.holding_capacity())).max().unwrap_or(0)
    }

    pub fn stream_name(&self, s: usize) -> String {
        let st = &self.streams[s];
        format!("{}->{}", self.links[st.from].id, self.links[st.to].id)
    }
}

/// ⌊length / (vehicle_length + min_separation)⌋.
pub fn link_capacity(length_m: f64, vehicle_length: f64, min_separation: f64) -> Result<u32> {
    if !(length_m > 0.0 && vehicle_length > 0.0 && min_separation > 0.0) {
        return invalid(format!(
            "link_capacity needs positive inputs, got ({length_m}, {vehicle_length}, {min_separation})"
        ));
    }
    Ok((length_m / (vehicle_length + min_separation) + 1e-9).floor() as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub count: usize,
    pub lengths: Vec<f64>,
}

impl Partition {
    pub fn capacities(&self, vehicle_length: f64, min_separation: f64) -> Result<Vec<u32>> {
        self.lengths
            .iter()
            .map(|&l| link_capacity(l, vehicle_length, min_separation))
            .collect()
    }
}

/// Splits a link into segments of roughly v*·λ meters, rounding half up.
pub fn partition_link(length_m: f64, free_speed: f64, lambda_s: f64) -> Result<Partition> {
    if !(length_m > 0.0 && free_speed > 0.0 && lambda_s > 0.0) {
        return invalid(format!(
            "partition_link needs positive inputs, got ({length_m}, {free_speed}, {lambda_s})"
        ));
    }
    let ratio = length_m / (free_speed * lambda_s);
    let count = ((ratio + 0.5 + 1e-9).floor() as usize).max(1);
    Ok(Partition {
        count,
        lengths: vec![length_m / count as f64; count],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_examples() {
        assert_eq!(link_capacity(200.0, 5.0, 1.0).unwrap(), 33);
        assert_eq!(link_capacity(6.0, 5.0, 1.0).unwrap(), 1);
        assert_eq!(link_capacity(100.0, 4.0, 1.0).unwrap(), 20);
        assert!(link_capacity(0.0, 5.0, 1.0).is_err());
        assert!(link_capacity(10.0, -5.0, 1.0).is_err());
    }

    #[test]
    fn partition_examples() {
        let p = partition_link(300.0, 10.0, 5.0).unwrap();
        assert_eq!(p.count, 6);
        assert!(p.lengths.iter().all(|&l| (l - 50.0).abs() < 1e-12));
        assert_eq!(partition_link(50.0, 10.0, 5.0).unwrap().count, 1);
        assert_eq!(partition_link(10.0, 10.0, 5.0).unwrap().count, 1);
        assert_eq!(partition_link(275.0, 10.0, 5.0).unwrap().count, 6);
        let p = partition_link(275.0, 10.0, 5.0).unwrap();
        assert!((p.lengths.iter().sum::<f64>() - 275.0).abs() < 1e-9);
        assert!(partition_link(100.0, 0.0, 5.0).is_err());
    }

    #[test]
    fn speed_table_checks() {
        let r = |n, d| Level::new(n, d);
        assert!(SpeedLevelTable::new(vec![r(1, 1), r(3, 4), r(1, 2)]).is_ok());
        assert!(SpeedLevelTable::new(vec![r(1, 2), r(3, 4)]).is_err());
        assert!(SpeedLevelTable::new(vec![r(0, 1)]).is_err());
        assert!(SpeedLevelTable::new(vec![r(5, 4)]).is_err());
        assert!(SpeedLevelTable::new(vec![]).is_err());
    }
}
