//! Runtime view of a road network: lanes and junction connectors as one segment list.

use std::collections::BTreeMap;

use crate::class::AgentClass;
use crate::geom::{polyline_distance, Polyline, Vec2};
use crate::map::{DrivingSide, RoadNetwork};

/// Connectors closer than this are treated as crossing paths.
const CONFLICT_DISTANCE_M: f64 = 3.0;
/// Comfortable lateral acceleration used to cap speed through turns.
const LATERAL_ACCEL: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SegKind {
    Lane { edge: usize },
    Connector { from_lane: usize, to_lane: usize, node: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct Segment {
    pub kind: SegKind,
    pub line: Polyline,
    pub speed_limit: f64,
    pub width: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct SimNet {
    pub segs: Vec<Segment>,
    pub lane_ids: Vec<String>,
    pub lane_index_on_edge: Vec<usize>,
    pub lane_allows: Vec<Vec<AgentClass>>,
    pub edge_ids: Vec<String>,
    pub edge_lookup: BTreeMap<String, usize>,
    pub edge_lanes: Vec<Vec<usize>>,
    pub edge_priority: Vec<i32>,
    pub edge_to_node: Vec<usize>,
    pub edge_from_node: Vec<usize>,
    pub edge_signal: Vec<Option<usize>>,
    pub node_ids: Vec<String>,
    /// (lane, next edge) -> connector segment
    pub connector: BTreeMap<(usize, usize), usize>,
    /// Connectors leaving each lane.
    pub lane_out: Vec<Vec<usize>>,
    /// Connectors entering each lane.
    pub lane_in: Vec<Vec<usize>>,
    pub conflicts: BTreeMap<usize, Vec<usize>>,
    pub driving_side: DrivingSide,
}

fn bezier(p0: Vec2, c0: Vec2, c1: Vec2, p1: Vec2, n: usize) -> Vec<Vec2> {
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let u = 1.0 - t;
            p0.scale(u * u * u)
                .add(c0.scale(3.0 * u * u * t))
                .add(c1.scale(3.0 * u * t * t))
                .add(p1.scale(t * t * t))
        })
        .collect()
}

fn min_radius(pts: &[Vec2]) -> f64 {
    let mut r = f64::INFINITY;
    for w in pts.windows(3) {
        let a = w[0].dist(w[1]);
        let b = w[1].dist(w[2]);
        let c = w[0].dist(w[2]);
        let area2 = w[1].sub(w[0]).cross(w[2].sub(w[0])).abs();
        if area2 > 1e-9 {
            r = r.min(a * b * c / (2.0 * area2));
        }
    }
    r
}

impl SimNet {
    pub fn new(n: &RoadNetwork) -> Self {
        let node_ids: Vec<String> = n.nodes.iter().map(|x| x.id.clone()).collect();
        let node_lookup: BTreeMap<&str, usize> = node_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let edge_ids: Vec<String> = n.edges.iter().map(|e| e.id.clone()).collect();
        let edge_lookup: BTreeMap<String, usize> = edge_ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let lane_lookup: BTreeMap<&str, usize> = n.lanes.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect();

        let mut segs = Vec::new();
        let mut lane_index_on_edge = Vec::new();
        let mut lane_allows = Vec::new();
        for l in &n.lanes {
            let edge = edge_lookup[&l.edge];
            segs.push(Segment {
                kind: SegKind::Lane { edge },
                line: Polyline::new(l.centerline.clone()),
                speed_limit: n.edges[edge].speed_limit,
                width: l.width,
            });
            lane_index_on_edge.push(l.index);
            lane_allows.push(l.allowed.clone());
        }
        let edge_lanes: Vec<Vec<usize>> = n
            .edges
            .iter()
            .map(|e| {
                let mut v: Vec<usize> = e.lanes.iter().filter_map(|id| lane_lookup.get(id.as_str()).copied()).collect();
                v.sort_by_key(|&l| lane_index_on_edge[l]);
                v
            })
            .collect();
        let edge_to_node: Vec<usize> = n.edges.iter().map(|e| node_lookup[e.to.as_str()]).collect();
        let edge_from_node: Vec<usize> = n.edges.iter().map(|e| node_lookup[e.from.as_str()]).collect();
        let signal_lookup: BTreeMap<&str, usize> =
            n.signals.iter().enumerate().map(|(i, s)| (s.node.as_str(), i)).collect();
        let edge_signal = n.edges.iter().map(|e| signal_lookup.get(e.to.as_str()).copied()).collect();

        let rideable = |lanes: &[usize]| {
            lanes.iter().any(|&l| {
                lane_allows[l].contains(&AgentClass::Vehicle) || lane_allows[l].contains(&AgentClass::Cyclist)
            })
        };
        let mut connector = BTreeMap::new();
        let lane_count = n.lanes.len();
        let mut lane_out = vec![Vec::new(); lane_count];
        let mut lane_in = vec![Vec::new(); lane_count];
        let mut node_connectors: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (ei, e) in n.edges.iter().enumerate() {
            if !rideable(&edge_lanes[ei]) {
                continue;
            }
            for (fi, f) in n.edges.iter().enumerate() {
                if f.from != e.to || e.reverse_of.as_deref() == Some(f.id.as_str()) || !rideable(&edge_lanes[fi]) {
                    continue;
                }
                let to_lanes = &edge_lanes[fi];
                for (i, &from_lane) in edge_lanes[ei].iter().enumerate() {
                    let to_lane = to_lanes[i.min(to_lanes.len() - 1)];
                    let a = &segs[from_lane].line;
                    let b = &segs[to_lane].line;
                    let (p0, h0) = a.pose_at(a.length());
                    let (p1, h1) = b.pose_at(0.0);
                    let d = p0.dist(p1).max(0.5);
                    let pts = bezier(
                        p0,
                        p0.add(Vec2::from_heading(h0).scale(d / 3.0)),
                        p1.sub(Vec2::from_heading(h1).scale(d / 3.0)),
                        p1,
                        12,
                    );
                    let curve_limit = (LATERAL_ACCEL * min_radius(&pts)).sqrt();
                    let node = edge_to_node[ei];
                    let id = segs.len();
                    segs.push(Segment {
                        kind: SegKind::Connector { from_lane, to_lane, node },
                        line: Polyline::new(pts),
                        speed_limit: e.speed_limit.min(f.speed_limit).min(curve_limit).max(2.0),
                        width: segs[from_lane].width,
                    });
                    connector.insert((from_lane, fi), id);
                    lane_out[from_lane].push(id);
                    lane_in[to_lane].push(id);
                    node_connectors.entry(node).or_default().push(id);
                }
            }
        }

        let mut conflicts: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for list in node_connectors.values() {
            for (i, &a) in list.iter().enumerate() {
                for &b in &list[i + 1..] {
                    let (SegKind::Connector { from_lane: fa, to_lane: ta, .. }, SegKind::Connector { from_lane: fb, to_lane: tb, .. }) =
                        (segs[a].kind, segs[b].kind)
                    else {
                        continue;
                    };
                    if fa == fb {
                        continue;
                    }
                    let crossing = ta == tb
                        || polyline_distance(segs[a].line.points(), segs[b].line.points()) < CONFLICT_DISTANCE_M;
                    if crossing {
                        conflicts.entry(a).or_default().push(b);
                        conflicts.entry(b).or_default().push(a);
                    }
                }
            }
        }

        SimNet {
            segs,
            lane_ids: n.lanes.iter().map(|l| l.id.clone()).collect(),
            lane_index_on_edge,
            lane_allows,
            edge_ids,
            edge_lookup,
            edge_lanes,
            edge_priority: n.edges.iter().map(|e| e.priority).collect(),
            edge_to_node,
            edge_from_node,
            edge_signal,
            node_ids,
            connector,
            lane_out,
            lane_in,
            conflicts,
            driving_side: n.driving_side,
        }
    }

    pub fn seg_len(&self, seg: usize) -> f64 {
        self.segs[seg].line.length()
    }

    pub fn lane_edge(&self, lane: usize) -> usize {
        match self.segs[lane].kind {
            SegKind::Lane { edge } => edge,
            SegKind::Connector { .. } => unreachable!("segment {lane} is a connector"),
        }
    }

    pub fn is_lane(&self, seg: usize) -> bool {
        matches!(self.segs[seg].kind, SegKind::Lane { .. })
    }

    /// Neighbouring lane on the same edge, toward the road centre (`left == true` under
    /// right-hand traffic) or toward the curb.
    pub fn adjacent_lane(&self, lane: usize, left: bool) -> Option<usize> {
        let edge = self.lane_edge(lane);
        let idx = self.lane_index_on_edge[lane];
        let inward = match self.driving_side {
            DrivingSide::Right => left,
            DrivingSide::Left => !left,
        };
        let target = if inward { idx.checked_add(1)? } else { idx.checked_sub(1)? };
        self.edge_lanes[edge].iter().copied().find(|&l| self.lane_index_on_edge[l] == target)
    }

    pub fn route_length(&self, route: &[usize]) -> f64 {
        route
            .iter()
            .map(|&e| self.edge_lanes[e].first().map(|&l| self.seg_len(l)).unwrap_or(0.0))
            .sum()
    }

    /// Signed angle turned across a connector, positive to the left.
    pub fn turn_angle(&self, conn: usize) -> f64 {
        let line = &self.segs[conn].line;
        let (_, h0) = line.pose_at(0.0);
        let (_, h1) = line.pose_at(line.length());
        crate::geom::wrap_angle(h1 - h0)
    }
}
