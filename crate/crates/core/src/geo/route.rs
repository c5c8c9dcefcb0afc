use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use super::{haversine_m, GeoError, GeoGraph, GeoPoint, Result, Way, EARTH_RADIUS_M};
use crate::geom::{point_segment_distance, Vec2};

/// Origin and destination must snap to a graph node within this distance.
pub const SNAP_LIMIT_M: f64 = 250.0;

/// Path lengths closer than this are considered equal and resolved by node-id order.
const TIE_EPS_M: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RouteResult {
    pub graph: GeoGraph,
    pub path: Vec<i64>,
    pub length_m: f64,
}

/// Highway classes that carry motor traffic.
pub fn is_vehicle_class(highway: &str) -> bool {
    !matches!(
        highway,
        "footway"
            | "pedestrian"
            | "path"
            | "steps"
            | "cycleway"
            | "bridleway"
            | "corridor"
            | "elevator"
            | "platform"
            | "bus_stop"
            | "construction"
            | "proposed"
            | "crossing"
            | "sidewalk"
            | "abandoned"
            | "raceway"
    )
}

/// Direction flags (forward, backward) for a vehicle way.
pub fn travel_directions(w: &Way) -> (bool, bool) {
    match w.tag("oneway") {
        Some("yes") | Some("true") | Some("1") => (true, false),
        Some("-1") | Some("reverse") => (false, true),
        Some("no") | Some("false") | Some("0") => (true, true),
        _ if w.is_roundabout() || w.highway() == Some("motorway") => (true, false),
        _ => (true, true),
    }
}

fn adjacency(g: &GeoGraph) -> BTreeMap<i64, Vec<(i64, f64)>> {
    let mut adj: BTreeMap<i64, Vec<(i64, f64)>> = BTreeMap::new();
    for w in g.ways.values() {
        if !w.highway().is_some_and(is_vehicle_class) {
            continue;
        }
        let (fwd, bwd) = travel_directions(w);
        for pair in w.nodes.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if a == b {
                continue;
            }
            let d = haversine_m(g.nodes[&a], g.nodes[&b]);
            if fwd {
                adj.entry(a).or_default().push((b, d));
            }
            if bwd {
                adj.entry(b).or_default().push((a, d));
            }
            adj.entry(a).or_default();
            adj.entry(b).or_default();
        }
    }
    for v in adj.values_mut() {
        v.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        v.dedup_by_key(|e| e.0);
    }
    adj
}

fn snap(g: &GeoGraph, adj: &BTreeMap<i64, Vec<(i64, f64)>>, p: GeoPoint) -> Result<i64> {
    let mut best: Option<(f64, i64)> = None;
    for id in adj.keys() {
        let d = haversine_m(p, g.nodes[id]);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, *id));
        }
    }
    match best {
        Some((d, id)) if d <= SNAP_LIMIT_M => Ok(id),
        _ => Err(GeoError::NoSnap { lat: p.lat, lon: p.lon, limit_m: SNAP_LIMIT_M }),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Label {
    dist: f64,
    path: Vec<i64>,
}

impl Label {
    fn better_than(&self, other: &Label) -> bool {
        if self.dist < other.dist - TIE_EPS_M {
            true
        } else if self.dist > other.dist + TIE_EPS_M {
            false
        } else {
            self.path < other.path
        }
    }
}

impl Eq for Label {}

impl Ord for Label {
    // Min-heap ordering on (dist, path).
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.path.cmp(&self.path))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-length node path; equal-length candidates resolve to the lexicographically
/// smaller node sequence.
pub(crate) fn shortest_node_path(
    adj: &BTreeMap<i64, Vec<(i64, f64)>>,
    from: i64,
    to: i64,
) -> Option<(Vec<i64>, f64)> {
    let mut best: BTreeMap<i64, Label> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    let start = Label { dist: 0.0, path: vec![from] };
    best.insert(from, start.clone());
    heap.push(start);
    while let Some(lbl) = heap.pop() {
        let node = *lbl.path.last().expect("non-empty path");
        if best.get(&node) != Some(&lbl) {
            continue;
        }
        if node == to {
            return Some((lbl.path, lbl.dist));
        }
        for &(next, w) in adj.get(&node).map(Vec::as_slice).unwrap_or(&[]) {
            if lbl.path.contains(&next) {
                continue;
            }
            let mut path = lbl.path.clone();
            path.push(next);
            let cand = Label { dist: lbl.dist + w, path };
            if best.get(&next).is_none_or(|cur| cand.better_than(cur)) {
                best.insert(next, cand.clone());
                heap.push(cand);
            }
        }
    }
    None
}

/// Route between two coordinates and the subgraph of ways within `corridor_m` of it.
pub fn shortest_route(g: &GeoGraph, origin: GeoPoint, dest: GeoPoint, corridor_m: f64) -> Result<RouteResult> {
    origin.validate()?;
    dest.validate()?;
    if !(corridor_m.is_finite() && corridor_m >= 0.0) {
        return Err(GeoError::InvalidQuery("corridor_m must be >= 0".into()));
    }
    let adj = adjacency(g);
    let a = snap(g, &adj, origin)?;
    let b = snap(g, &adj, dest)?;
    let (path, length_m) = shortest_node_path(&adj, a, b).ok_or(GeoError::Unreachable)?;

    // Corridor test in a tangent plane at the origin node.
    let o = g.nodes[&a];
    let coslat = o.lat.to_radians().cos();
    let proj = |p: &GeoPoint| {
        Vec2::new(
            EARTH_RADIUS_M * (p.lon - o.lon).to_radians() * coslat,
            EARTH_RADIUS_M * (p.lat - o.lat).to_radians(),
        )
    };
    let route_pts: Vec<Vec2> = path.iter().map(|n| proj(&g.nodes[n])).collect();
    let near = |p: Vec2| -> bool {
        if route_pts.len() == 1 {
            return p.dist(route_pts[0]) <= corridor_m;
        }
        route_pts.windows(2).any(|s| point_segment_distance(p, s[0], s[1]) <= corridor_m)
    };

    let mut out = g.clone();
    out.ways.retain(|_, w| w.nodes.iter().any(|n| path.contains(n) || near(proj(&g.nodes[n]))));
    if out.ways.is_empty() {
        return Err(GeoError::EmptyExtract);
    }
    out.prune_nodes();
    Ok(RouteResult { graph: out, path, length_m })
}
