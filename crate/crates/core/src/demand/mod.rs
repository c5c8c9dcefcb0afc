//! Traffic demand: manual tables or Greenshields-derived flows from segment speeds, and
//! their realization as Poisson arrivals.

mod source;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::class::AgentClass;
use crate::map::{Edge, RoadNetwork};

pub use source::{parse_speed_feed, HttpSpeedSource, JsonFileSpeedSource, SpeedFeed, SpeedFeedEntry, TrafficSpeedSource};

#[derive(Debug, thiserror::Error)]
pub enum DemandError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown edge {0}")]
    UnknownEdge(String),
    #[error("route {0} is not a connected edge sequence")]
    DisconnectedRoute(String),
    #[error("speed source: {0}")]
    Source(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DemandError>;

/// Observed and free-flow speed of one edge, m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpeed {
    pub edge_id: String,
    pub v_obs: f64,
    pub v_free: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenshieldsParams {
    /// Jam density, vehicles per km per lane.
    pub k_jam: f64,
}

impl Default for GreenshieldsParams {
    fn default() -> Self {
        Self { k_jam: 120.0 }
    }
}

impl GreenshieldsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_jam > 0.0 && self.k_jam <= 300.0) {
            return Err(DemandError::Domain(format!("k_jam {} outside (0, 300]", self.k_jam)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandEntry {
    pub id: String,
    pub route: Vec<String>,
    pub class: AgentClass,
    /// Agents per hour.
    pub flow: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DemandTable {
    pub entries: Vec<DemandEntry>,
}

impl DemandTable {
    pub fn validate(&self, n: &RoadNetwork) -> Result<()> {
        for e in &self.entries {
            if !e.flow.is_finite() || e.flow < 0.0 {
                return Err(DemandError::Domain(format!("flow {} on {}", e.flow, e.id)));
            }
            check_route(n, &e.id, &e.route)?;
        }
        Ok(())
    }

    pub fn total_flow(&self, class: AgentClass) -> f64 {
        self.entries.iter().filter(|e| e.class == class).map(|e| e.flow).sum()
    }
}

/// Knobs for the speed-feed mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedDemandOptions {
    /// Per-edge vehicle flow (veh/h) for edges absent from the feed.
    pub default_flow_vph: f64,
    pub pedestrian_fraction: f64,
    pub cyclist_fraction: f64,
}

impl Default for SpeedDemandOptions {
    fn default() -> Self {
        Self { default_flow_vph: 300.0, pedestrian_fraction: 0.10, cyclist_fraction: 0.05 }
    }
}

/// One manually specified flow: either an explicit edge list or a from/to edge pair
/// that is routed by shortest length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualFlow {
    #[serde(default)]
    pub route: Option<Vec<String>>,
    #[serde(default)]
    pub from: Option<String>,
    #[serde(default)]
    pub to: Option<String>,
    pub class: AgentClass,
    pub flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpawnEvent {
    pub t: f64,
    pub class: AgentClass,
    pub route_id: String,
    pub route: Vec<String>,
    pub speed: f64,
}

pub type SpawnEvents = Vec<SpawnEvent>;

pub fn greenshields_density(v_obs: f64, v_free: f64, k_jam: f64) -> Result<f64> {
    if !(v_free > 0.0) || !(v_obs >= 0.0) || v_obs > v_free || !(k_jam > 0.0) {
        return Err(DemandError::Domain(format!("v_obs={v_obs} v_free={v_free} k_jam={k_jam}")));
    }
    Ok(k_jam * (1.0 - v_obs / v_free))
}

/// Flow in veh/h from density (veh/km) and speed (m/s).
pub fn flow_from_density(k: f64, v_obs: f64) -> Result<f64> {
    if !(k >= 0.0) || !(v_obs >= 0.0) {
        return Err(DemandError::Domain(format!("k={k} v_obs={v_obs}")));
    }
    Ok(k * v_obs * 3.6)
}

fn check_route(n: &RoadNetwork, id: &str, route: &[String]) -> Result<()> {
    if route.is_empty() {
        return Err(DemandError::DisconnectedRoute(id.to_string()));
    }
    let idx = n.edge_index();
    let mut prev: Option<&Edge> = None;
    for e in route {
        let edge = *idx.get(e.as_str()).ok_or_else(|| DemandError::UnknownEdge(e.clone()))?;
        if let Some(p) = prev {
            if p.to != edge.from {
                return Err(DemandError::DisconnectedRoute(id.to_string()));
            }
        }
        prev = Some(edge);
    }
    Ok(())
}

/// Edges with no feeding edge other than their own reverse twin.
fn entry_edges(n: &RoadNetwork, class: AgentClass) -> Vec<&Edge> {
    n.edges
        .iter()
        .filter(|e| n.edge_allows(e, class) && n.predecessors(e, class).is_empty())
        .collect()
}

/// Shortest (by length) edge sequence from `from` to `to` for `class`; ties go to the
/// lexicographically smaller id sequence.
pub fn route_between(n: &RoadNetwork, from: &str, to: &str, class: AgentClass) -> Result<Vec<String>> {
    let idx = n.edge_index();
    let start = *idx.get(from).ok_or_else(|| DemandError::UnknownEdge(from.into()))?;
    idx.get(to).ok_or_else(|| DemandError::UnknownEdge(to.into()))?;
    let mut best: BTreeMap<&str, (f64, Vec<&str>)> = BTreeMap::new();
    best.insert(start.id.as_str(), (start.length(), vec![start.id.as_str()]));
    let mut frontier = vec![start.id.as_str()];
    // Label-correcting search; networks here are small.
    while let Some(cur) = frontier.pop() {
        let (len, path) = best[cur].clone();
        for s in n.successors(idx[cur], class) {
            if path.contains(&s.id.as_str()) {
                continue;
            }
            let cand_len = len + s.length();
            let mut cand = path.clone();
            cand.push(s.id.as_str());
            let better = match best.get(s.id.as_str()) {
                None => true,
                Some((l, p)) => cand_len < l - 1e-6 || ((cand_len - l).abs() <= 1e-6 && cand < *p),
            };
            if better {
                best.insert(s.id.as_str(), (cand_len, cand));
                frontier.push(s.id.as_str());
            }
        }
    }
    best.get(to)
        .map(|(_, p)| p.iter().map(|s| s.to_string()).collect())
        .ok_or_else(|| DemandError::DisconnectedRoute(format!("{from}->{to}")))
}

pub fn manual_demand(flows: &[ManualFlow], n: &RoadNetwork) -> Result<DemandTable> {
    let mut entries = Vec::new();
    for (i, f) in flows.iter().enumerate() {
        let id = format!("r{i}");
        let route = match (&f.route, &f.from, &f.to) {
            (Some(r), _, _) => r.clone(),
            (None, Some(a), Some(b)) => route_between(n, a, b, f.class)?,
            _ => return Err(DemandError::Domain(format!("flow {i} needs a route or from/to"))),
        };
        entries.push(DemandEntry { id, route, class: f.class, flow: f.flow });
    }
    let table = DemandTable { entries };
    table.validate(n)?;
    Ok(table)
}

/// Greedy downstream walk from `entry`, preferring the successor with the most unassigned
/// flow (ties by id) and stopping at a network exit or before revisiting an edge.
fn greedy_path<'a>(
    n: &'a RoadNetwork,
    entry: &'a Edge,
    class: AgentClass,
    remaining: &BTreeMap<&str, f64>,
) -> (Vec<&'a Edge>, f64) {
    let mut path = vec![entry];
    let mut bottleneck = remaining.get(entry.id.as_str()).copied().unwrap_or(0.0);
    let mut cur = entry;
    while path.len() < 256 {
        let mut next: Option<(&Edge, f64)> = None;
        for s in n.successors(cur, class) {
            if path.iter().any(|p| p.id == s.id) {
                continue;
            }
            let r = remaining.get(s.id.as_str()).copied().unwrap_or(0.0);
            if next.is_none_or(|(_, best)| r > best) {
                next = Some((s, r));
            }
        }
        let Some((s, r)) = next else { break };
        if r > 1e-9 {
            bottleneck = bottleneck.min(r);
        }
        path.push(s);
        cur = s;
    }
    (path, bottleneck)
}

/// Derive a demand table from a speed feed.
///
/// Per-edge vehicle flow is `q · lanes` with `q` from the Greenshields relation. Routes
/// start at entry edges and are peeled off greedily until each entry's flow is assigned.
/// Cyclists share the vehicle routes; pedestrians get routes on the footway graph. Both
/// scale with the total vehicle entry flow.
pub fn demand_from_speeds(
    speeds: &[SegmentSpeed],
    p: GreenshieldsParams,
    n: &RoadNetwork,
    opts: &SpeedDemandOptions,
) -> Result<DemandTable> {
    p.validate()?;
    let idx = n.edge_index();
    let mut observed: BTreeMap<&str, &SegmentSpeed> = BTreeMap::new();
    for s in speeds {
        if !idx.contains_key(s.edge_id.as_str()) {
            return Err(DemandError::UnknownEdge(s.edge_id.clone()));
        }
        observed.insert(s.edge_id.as_str(), s);
    }

    let mut remaining: BTreeMap<&str, f64> = BTreeMap::new();
    for e in n.edges.iter().filter(|e| n.edge_allows(e, AgentClass::Vehicle)) {
        let flow = match observed.get(e.id.as_str()) {
            Some(s) => {
                let k = greenshields_density(s.v_obs, s.v_free, p.k_jam)?;
                flow_from_density(k, s.v_obs)? * e.lanes.len() as f64
            }
            None => {
                log::warn!("edge {} missing from speed feed, using default flow {}", e.id, opts.default_flow_vph);
                opts.default_flow_vph
            }
        };
        remaining.insert(e.id.as_str(), flow);
    }

    let mut routes: Vec<(Vec<String>, f64)> = Vec::new();
    for entry in entry_edges(n, AgentClass::Vehicle) {
        let mut rounds = 0;
        loop {
            let left = remaining.get(entry.id.as_str()).copied().unwrap_or(0.0);
            let (path, flow) = greedy_path(n, entry, AgentClass::Vehicle, &remaining);
            let flow = if left > 1e-9 { flow } else { 0.0 };
            for e in &path {
                if let Some(r) = remaining.get_mut(e.id.as_str()) {
                    *r = (*r - flow).max(0.0);
                }
            }
            let ids: Vec<String> = path.iter().map(|e| e.id.clone()).collect();
            match routes.iter_mut().find(|(r, _)| *r == ids) {
                Some((_, f)) => *f += flow,
                None => routes.push((ids, flow)),
            }
            rounds += 1;
            if flow <= 1e-9 || rounds >= 16 || remaining[entry.id.as_str()] <= 1e-9 {
                break;
            }
        }
    }

    let mut entries: Vec<DemandEntry> = Vec::new();
    let vehicle_total: f64 = routes.iter().map(|(_, f)| f).sum();
    for (route, flow) in &routes {
        entries.push(DemandEntry { id: String::new(), route: route.clone(), class: AgentClass::Vehicle, flow: *flow });
    }
    if opts.cyclist_fraction > 0.0 {
        for (route, flow) in &routes {
            if route.iter().all(|e| n.edge_allows(idx[e.as_str()], AgentClass::Cyclist)) {
                entries.push(DemandEntry {
                    id: String::new(),
                    route: route.clone(),
                    class: AgentClass::Cyclist,
                    flow: flow * opts.cyclist_fraction,
                });
            }
        }
    }
    if opts.pedestrian_fraction > 0.0 {
        let ped_routes: Vec<Vec<String>> = entry_edges(n, AgentClass::Pedestrian)
            .into_iter()
            .map(|e| {
                let (path, _) = greedy_path(n, e, AgentClass::Pedestrian, &BTreeMap::new());
                path.iter().map(|e| e.id.clone()).collect()
            })
            .collect();
        if ped_routes.is_empty() {
            log::warn!("no walkable entry edges; pedestrian demand dropped");
        }
        let share = vehicle_total * opts.pedestrian_fraction / ped_routes.len().max(1) as f64;
        for route in ped_routes {
            entries.push(DemandEntry { id: String::new(), route, class: AgentClass::Pedestrian, flow: share });
        }
    }
    for (i, e) in entries.iter_mut().enumerate() {
        e.id = format!("r{i}");
    }
    Ok(DemandTable { entries })
}

/// Realize a demand table as Poisson arrivals over `[0, horizon_s]`.
///
/// Each route draws from its own ChaCha stream keyed by the route's position, so adding a
/// route never perturbs the arrivals of the others.
pub fn spawn_schedule(d: &DemandTable, n: &RoadNetwork, horizon_s: f64, seed: u64) -> Result<SpawnEvents> {
    if !(horizon_s > 0.0) {
        return Err(DemandError::Domain(format!("horizon {horizon_s}")));
    }
    let idx = n.edge_index();
    let mut events = Vec::new();
    for (i, entry) in d.entries.iter().enumerate() {
        if entry.flow <= 0.0 {
            continue;
        }
        let first = entry.route.first().ok_or_else(|| DemandError::DisconnectedRoute(entry.id.clone()))?;
        let edge = *idx.get(first.as_str()).ok_or_else(|| DemandError::UnknownEdge(first.clone()))?;
        let speed = edge.speed_limit.min(entry.class.default_speed());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let gap = Exp::new(entry.flow / 3600.0).map_err(|e| DemandError::Domain(e.to_string()))?;
        let mut t = 0.0;
        loop {
            t += gap.sample(&mut rng);
            if t > horizon_s {
                break;
            }
            events.push(SpawnEvent {
                t,
                class: entry.class,
                route_id: entry.id.clone(),
                route: entry.route.clone(),
                speed,
            });
        }
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.route_id.cmp(&b.route_id)));
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greenshields_examples() {
        assert_eq!(greenshields_density(30.0, 30.0, 120.0).unwrap(), 0.0);
        assert_eq!(greenshields_density(0.0, 30.0, 120.0).unwrap(), 120.0);
        assert_eq!(greenshields_density(15.0, 30.0, 120.0).unwrap(), 60.0);
        assert!(greenshields_density(31.0, 30.0, 120.0).is_err());
        assert!(greenshields_density(1.0, 0.0, 120.0).is_err());
    }

    #[test]
    fn flow_examples() {
        assert_eq!(flow_from_density(0.0, 20.0).unwrap(), 0.0);
        assert!((flow_from_density(60.0, 15.0).unwrap() - 3240.0).abs() < 1e-9);
        assert!(flow_from_density(-1.0, 1.0).is_err());
    }

    #[test]
    fn kjam_range() {
        assert!(GreenshieldsParams { k_jam: 0.0 }.validate().is_err());
        assert!(GreenshieldsParams { k_jam: 300.0 }.validate().is_ok());
        assert!(GreenshieldsParams { k_jam: 301.0 }.validate().is_err());
    }
}
