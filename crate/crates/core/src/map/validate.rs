use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{NodeKind, RoadNetwork};
use crate::class::AgentClass;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Number of weakly connected components of the drivable graph when there is more
    /// than one; zero for a connected network.
    pub disconnected_components: usize,
    pub zero_length_lanes: usize,
    pub duplicate_lane_ids: usize,
    pub signals_without_program: usize,
    pub dangling_references: usize,
    pub invalid_lane_widths: usize,
}

impl ValidationReport {
    pub fn passes(&self) -> bool {
        *self == ValidationReport::default()
    }
}

pub fn validate_network(n: &RoadNetwork) -> ValidationReport {
    let mut r = ValidationReport::default();

    let mut seen = BTreeSet::new();
    for l in &n.lanes {
        if !seen.insert(l.id.as_str()) {
            r.duplicate_lane_ids += 1;
        }
        let degenerate =
            l.centerline.len() < 2 || l.centerline.windows(2).any(|w| w[0].dist(w[1]) <= 1e-9);
        if degenerate {
            r.zero_length_lanes += 1;
        }
        if l.allows(AgentClass::Vehicle) && !(2.0..=5.0).contains(&l.width) {
            r.invalid_lane_widths += 1;
        }
    }

    let node_ids: BTreeSet<&str> = n.nodes.iter().map(|x| x.id.as_str()).collect();
    let lane_ids: BTreeSet<&str> = n.lanes.iter().map(|l| l.id.as_str()).collect();
    for e in &n.edges {
        if !node_ids.contains(e.from.as_str()) || !node_ids.contains(e.to.as_str()) {
            r.dangling_references += 1;
        }
        if e.lanes.is_empty() || e.lanes.iter().any(|l| !lane_ids.contains(l.as_str())) {
            r.dangling_references += 1;
        }
    }

    let programmed: BTreeSet<&str> = n
        .signals
        .iter()
        .filter(|s| !s.program.phases.is_empty() && s.program.cycle_s > 0.0)
        .map(|s| s.node.as_str())
        .collect();
    for s in &n.signals {
        if !node_ids.contains(s.node.as_str()) {
            r.dangling_references += 1;
        }
        let incoming: Vec<String> = n.incoming(&s.node).iter().map(|e| e.id.clone()).collect();
        let vehicle_incoming: Vec<String> = incoming
            .into_iter()
            .filter(|e| n.edge(e).is_some_and(|e| n.edge_allows(e, AgentClass::Vehicle)))
            .collect();
        if s.program.check(&vehicle_incoming).is_err() {
            r.signals_without_program += 1;
        }
    }
    r.signals_without_program += n
        .nodes
        .iter()
        .filter(|x| x.kind == NodeKind::TrafficLight && !programmed.contains(x.id.as_str()))
        .count();

    // Union-find over nodes touched by drivable edges.
    let drivable: Vec<_> = n.edges.iter().filter(|e| n.edge_allows(e, AgentClass::Vehicle)).collect();
    let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
    fn find<'a>(p: &mut BTreeMap<&'a str, &'a str>, x: &'a str) -> &'a str {
        let mut root = x;
        while let Some(&up) = p.get(root) {
            if up == root {
                break;
            }
            root = up;
        }
        let mut cur = x;
        while cur != root {
            let next = p[cur];
            p.insert(cur, root);
            cur = next;
        }
        root
    }
    for e in &drivable {
        parent.entry(e.from.as_str()).or_insert(e.from.as_str());
        parent.entry(e.to.as_str()).or_insert(e.to.as_str());
    }
    for e in &drivable {
        let a = find(&mut parent, e.from.as_str());
        let b = find(&mut parent, e.to.as_str());
        if a != b {
            parent.insert(a, b);
        }
    }
    let keys: Vec<&str> = parent.keys().copied().collect();
    let roots: BTreeSet<&str> = keys.into_iter().map(|k| find(&mut parent, k)).collect();
    if roots.len() > 1 {
        r.disconnected_components = roots.len();
    }
    r
}
