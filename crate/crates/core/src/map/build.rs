use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};

use super::{
    Boundary, BoundaryKind, Crosswalk, DrivingSide, Edge, Lane, MapError, NetNode, NetworkDefaults, NodeKind,
    ProjectedGraph, Result, RoadNetwork, Signal, SignalPhase, SignalProgram,
};
use crate::class::AgentClass;
use crate::geo::{travel_directions, Way};
use crate::geom::{offset_polyline, polyline_length, segment_intersection, trim_polyline, wrap_angle, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum WayCategory {
    Vehicle,
    Pedestrian,
    Cycle,
    Ignored,
}

pub fn classify_way(w: &Way) -> WayCategory {
    match w.highway() {
        Some(
            "motorway" | "trunk" | "primary" | "secondary" | "tertiary" | "unclassified" | "residential"
            | "service" | "living_street" | "road" | "motorway_link" | "trunk_link" | "primary_link"
            | "secondary_link" | "tertiary_link",
        ) => WayCategory::Vehicle,
        Some("footway" | "pedestrian" | "path" | "steps" | "sidewalk" | "crossing") => WayCategory::Pedestrian,
        Some("cycleway") => WayCategory::Cycle,
        _ => WayCategory::Ignored,
    }
}

fn class_priority(highway: &str) -> i32 {
    match highway.trim_end_matches("_link") {
        "motorway" => 13,
        "trunk" => 12,
        "primary" => 11,
        "secondary" => 10,
        "tertiary" => 9,
        "unclassified" | "road" => 8,
        "residential" => 7,
        "living_street" => 6,
        "service" => 5,
        "cycleway" => 2,
        _ => 1,
    }
}

/// Lanes per direction when OSM carries no `lanes` tag.
fn default_lanes_per_direction(highway: &str) -> usize {
    match highway {
        "motorway" => 3,
        "trunk" | "primary" | "secondary" => 2,
        _ => 1,
    }
}

fn default_speed_kmh(highway: &str) -> f64 {
    match highway.trim_end_matches("_link") {
        "motorway" => 110.0,
        "trunk" => 90.0,
        "primary" => 60.0,
        "secondary" | "tertiary" => 50.0,
        "unclassified" | "road" => 40.0,
        "residential" => 30.0,
        "living_street" => 10.0,
        "service" => 20.0,
        "cycleway" => 20.0,
        _ => 5.0,
    }
}

/// Parse an OSM `maxspeed` value into m/s.
pub(crate) fn parse_maxspeed(v: &str) -> Option<f64> {
    let v = v.trim();
    let (num, factor) = if let Some(n) = v.strip_suffix("mph") {
        (n.trim(), 1.609_344)
    } else if let Some(n) = v.strip_suffix("km/h") {
        (n.trim(), 1.0)
    } else if let Some(n) = v.strip_suffix("kmh") {
        (n.trim(), 1.0)
    } else {
        (v, 1.0)
    };
    let kmh: f64 = num.parse().ok()?;
    (kmh.is_finite() && kmh > 0.0).then_some(kmh * factor / 3.6)
}

fn lane_counts(w: &Way, fwd: bool, bwd: bool, cat: WayCategory) -> (usize, usize) {
    if cat != WayCategory::Vehicle {
        return (usize::from(fwd), usize::from(bwd));
    }
    let tag = |k: &str| w.tag(k).and_then(|v| v.trim().parse::<usize>().ok()).filter(|n| *n > 0);
    let class = w.highway().unwrap_or("road");
    let dflt = default_lanes_per_direction(class);
    match (fwd, bwd) {
        (true, false) => (tag("lanes").unwrap_or(dflt), 0),
        (false, true) => (0, tag("lanes").unwrap_or(dflt)),
        _ => {
            let total = tag("lanes");
            let f = tag("lanes:forward").or(total.map(|n| n.div_ceil(2))).unwrap_or(dflt);
            let b = tag("lanes:backward").or(total.map(|n| (n / 2).max(1))).unwrap_or(dflt);
            (f, b)
        }
    }
}

struct Segment {
    way_id: i64,
    index: usize,
    cat: WayCategory,
    nodes: Vec<i64>,
    pts: Vec<Vec2>,
    fwd_lanes: usize,
    bwd_lanes: usize,
    width: f64,
}

impl Segment {
    fn start(&self) -> i64 {
        self.nodes[0]
    }
    fn end(&self) -> i64 {
        *self.nodes.last().unwrap()
    }
    fn total_width(&self) -> f64 {
        (self.fwd_lanes + self.bwd_lanes) as f64 * self.width
    }
    fn one_way(&self) -> bool {
        self.fwd_lanes == 0 || self.bwd_lanes == 0
    }
}

fn split_ways(pg: &ProjectedGraph, d: &NetworkDefaults) -> Result<Vec<Segment>> {
    // Occurrence counts per category group; vehicle ways split only against vehicle ways.
    let group = |c: WayCategory| c == WayCategory::Vehicle;
    let mut occ: BTreeMap<(bool, i64), usize> = BTreeMap::new();
    for w in pg.ways.values() {
        let cat = classify_way(w);
        if cat == WayCategory::Ignored {
            continue;
        }
        for n in &w.nodes {
            *occ.entry((group(cat), *n)).or_default() += 1;
        }
    }
    let mut segs = Vec::new();
    for (wid, w) in &pg.ways {
        let cat = classify_way(w);
        if cat == WayCategory::Ignored {
            continue;
        }
        let g = group(cat);
        let is_split = |i: usize, n: i64| {
            i == 0
                || i == w.nodes.len() - 1
                || occ.get(&(g, n)).copied().unwrap_or(0) >= 2
                || (g && pg.signals.contains(&n))
        };
        let (fwd, bwd) = if cat == WayCategory::Vehicle { travel_directions(w) } else { (true, true) };
        let (fl, bl) = lane_counts(w, fwd, bwd, cat);
        let width = if cat == WayCategory::Vehicle { d.lane_width_m } else { d.path_width_m };
        let mut cur: Vec<i64> = Vec::new();
        let mut index = 0;
        for (i, n) in w.nodes.iter().enumerate() {
            if cur.last() != Some(n) {
                cur.push(*n);
            }
            if i > 0 && is_split(i, *n) {
                let nodes = std::mem::replace(&mut cur, vec![*n]);
                let mut pts: Vec<Vec2> = Vec::with_capacity(nodes.len());
                for id in &nodes {
                    let p = pg.nodes[id];
                    if pts.last() != Some(&p) {
                        pts.push(p);
                    }
                }
                if pts.len() < 2 || polyline_length(&pts) <= 1e-9 {
                    return Err(MapError::DegenerateGeometry(format!(
                        "way {wid} segment {index} has zero length after projection"
                    )));
                }
                segs.push(Segment { way_id: *wid, index, cat, nodes, pts, fwd_lanes: fl, bwd_lanes: bl, width });
                index += 1;
            }
        }
    }
    if segs.is_empty() {
        return Err(MapError::EmptyNetwork);
    }
    Ok(segs)
}

fn node_id(n: i64) -> String {
    format!("n{n}")
}

/// Build the lane-level network: one edge per travel direction of every way segment.
pub fn build_network(pg: &ProjectedGraph, d: &NetworkDefaults) -> Result<RoadNetwork> {
    if pg.ways.is_empty() {
        return Err(MapError::EmptyNetwork);
    }
    let segs = split_ways(pg, d)?;
    let side = match d.driving_side {
        DrivingSide::Right => 1.0,
        DrivingSide::Left => -1.0,
    };

    // Vehicle junction degree and trim radius per node.
    let mut degree: BTreeMap<i64, usize> = BTreeMap::new();
    let mut half_width: BTreeMap<i64, f64> = BTreeMap::new();
    for s in segs.iter().filter(|s| s.cat == WayCategory::Vehicle) {
        for n in [s.start(), s.end()] {
            *degree.entry(n).or_default() += 1;
            let hw = half_width.entry(n).or_default();
            *hw = hw.max(s.total_width() / 2.0);
        }
    }
    let trim_radius = |n: i64| -> f64 {
        if degree.get(&n).copied().unwrap_or(0) >= 3 {
            half_width[&n] + d.junction_margin_m
        } else {
            0.0
        }
    };

    let mut nodes: BTreeMap<String, NetNode> = BTreeMap::new();
    let mut path_degree: BTreeMap<i64, usize> = BTreeMap::new();
    for s in &segs {
        if s.cat != WayCategory::Vehicle {
            for n in [s.start(), s.end()] {
                *path_degree.entry(n).or_default() += 1;
            }
        }
    }
    for s in &segs {
        for n in [s.start(), s.end()] {
            let deg = degree.get(&n).copied().or_else(|| path_degree.get(&n).copied()).unwrap_or(0);
            let kind = if pg.signals.contains(&n) && degree.contains_key(&n) {
                NodeKind::TrafficLight
            } else if deg <= 1 {
                NodeKind::DeadEnd
            } else {
                NodeKind::Priority
            };
            nodes.insert(node_id(n), NetNode { id: node_id(n), xy: pg.nodes[&n], kind });
        }
    }

    let mut edges = Vec::new();
    let mut lanes = Vec::new();
    let mut boundaries = Vec::new();
    for s in &segs {
        let way = &pg.ways[&s.way_id];
        let highway = way.highway().unwrap_or("road").to_string();
        let speed = way
            .tag("maxspeed")
            .and_then(parse_maxspeed)
            .unwrap_or_else(|| default_speed_kmh(&highway) / 3.6);
        let mut priority = class_priority(&highway);
        if way.is_roundabout() {
            priority += 10;
        }
        let allowed = match s.cat {
            WayCategory::Vehicle => vec![AgentClass::Vehicle, AgentClass::Cyclist],
            WayCategory::Pedestrian => vec![AgentClass::Pedestrian],
            _ => vec![AgentClass::Cyclist],
        };
        let len = polyline_length(&s.pts);
        let cap = 0.4 * len;
        let (r_start, r_end) = if s.cat == WayCategory::Vehicle {
            (trim_radius(s.start()).min(cap), trim_radius(s.end()).min(cap))
        } else {
            (0.0, 0.0)
        };
        let trimmed = trim_polyline(&s.pts, r_start, r_end);
        let both = !s.one_way();
        let fwd_id = format!("{}_{}_f", s.way_id, s.index);
        let bwd_id = format!("{}_{}_r", s.way_id, s.index);

        for (dir_fwd, n_lanes) in [(true, s.fwd_lanes), (false, s.bwd_lanes)] {
            if n_lanes == 0 {
                continue;
            }
            let (eid, from, to, geom) = if dir_fwd {
                (fwd_id.clone(), s.start(), s.end(), trimmed.clone())
            } else {
                let mut g = trimmed.clone();
                g.reverse();
                (bwd_id.clone(), s.end(), s.start(), g)
            };
            let n = n_lanes as f64;
            let w = s.width;
            // Lateral offset of a line `k` lane-widths in from the outer edge, measured to
            // the right of travel.
            let outer = if both { n } else { n / 2.0 };
            let mut lane_ids = Vec::new();
            for i in 0..n_lanes {
                let off = (outer - i as f64 - 0.5) * w;
                let lid = format!("{eid}_{i}");
                lanes.push(Lane {
                    id: lid.clone(),
                    edge: eid.clone(),
                    index: i,
                    centerline: offset_polyline(&geom, side * off),
                    width: w,
                    allowed: allowed.clone(),
                });
                lane_ids.push(lid);
            }
            if s.cat == WayCategory::Vehicle {
                let mut k = 0;
                let mut push = |kind, off: f64| {
                    boundaries.push(Boundary {
                        id: format!("{eid}_b{k}"),
                        edge: eid.clone(),
                        kind,
                        polyline: offset_polyline(&geom, side * off),
                    });
                    k += 1;
                };
                push(BoundaryKind::RoadBoundary, outer * w);
                for j in 1..n_lanes {
                    push(BoundaryKind::LaneLine, (outer - j as f64) * w);
                }
                if both {
                    if dir_fwd {
                        push(BoundaryKind::LaneLine, 0.0);
                    }
                } else {
                    push(BoundaryKind::RoadBoundary, (outer - n) * w);
                }
            }
            edges.push(Edge {
                id: eid,
                from: node_id(from),
                to: node_id(to),
                lanes: lane_ids,
                speed_limit: speed,
                priority,
                geometry: geom,
                way_id: s.way_id,
                highway: highway.clone(),
                roundabout: way.is_roundabout(),
                reverse_of: if both {
                    Some(if dir_fwd { bwd_id.clone() } else { fwd_id.clone() })
                } else {
                    None
                },
            });
        }
    }
    edges.sort_by(|a, b| a.id.cmp(&b.id));
    lanes.sort_by(|a, b| a.id.cmp(&b.id));
    boundaries.sort_by(|a, b| a.id.cmp(&b.id));

    let crosswalks = build_crosswalks(pg, &segs, d, &trim_radius);
    let signals = build_signals(pg, &edges, d);

    Ok(RoadNetwork {
        origin: pg.projection.origin,
        driving_side: d.driving_side,
        nodes: nodes.into_values().collect(),
        edges,
        lanes,
        boundaries,
        crosswalks,
        signals,
    })
}

fn crosswalk_polygon(c: Vec2, road_dir: Vec2, road_width: f64, cw_width: f64) -> Vec<Vec2> {
    let u = road_dir.normalized();
    let n = Vec2::new(-u.y, u.x);
    let hu = cw_width / 2.0;
    let hn = road_width / 2.0 + 0.5;
    vec![
        c.add(u.scale(hu)).add(n.scale(hn)),
        c.add(u.scale(hu)).sub(n.scale(hn)),
        c.sub(u.scale(hu)).sub(n.scale(hn)),
        c.sub(u.scale(hu)).add(n.scale(hn)),
    ]
}

/// Crosswalks where footways cross vehicle ways, plus across every approach of a
/// signalized junction that a footway touches.
fn build_crosswalks(
    pg: &ProjectedGraph,
    segs: &[Segment],
    d: &NetworkDefaults,
    trim_radius: &dyn Fn(i64) -> f64,
) -> Vec<Crosswalk> {
    let mut centers: Vec<(Vec2, Vec2, f64)> = Vec::new();
    let mut add = |c: Vec2, dir: Vec2, w: f64| {
        if !centers.iter().any(|(p, _, _)| p.dist(c) < 1.0) {
            centers.push((c, dir, w));
        }
    };
    let veh: Vec<&Segment> = segs.iter().filter(|s| s.cat == WayCategory::Vehicle).collect();
    for p in segs.iter().filter(|s| s.cat == WayCategory::Pedestrian) {
        for v in &veh {
            for pw in p.pts.windows(2) {
                for vw in v.pts.windows(2) {
                    if let Some((t, _)) = segment_intersection(pw[0], pw[1], vw[0], vw[1]) {
                        // A footway merely ending on the roadside is not a crossing.
                        let at_path_end = (t <= 1e-9 && pw[0] == p.pts[0])
                            || (t >= 1.0 - 1e-9 && pw[1] == *p.pts.last().unwrap());
                        if at_path_end && !pg.signals.contains(&p.start()) && !pg.signals.contains(&p.end()) {
                            continue;
                        }
                        add(pw[0].lerp(pw[1], t), vw[1].sub(vw[0]), v.total_width());
                    }
                }
            }
        }
        for n in [p.start(), p.end()] {
            if !pg.signals.contains(&n) {
                continue;
            }
            let center = pg.nodes[&n];
            let r = trim_radius(n) + d.crosswalk_width_m / 2.0;
            for v in veh.iter().filter(|v| v.start() == n || v.end() == n) {
                let (pt, dir) = if v.start() == n {
                    let dir = v.pts[1].sub(v.pts[0]).normalized();
                    (center.add(dir.scale(r)), dir)
                } else {
                    let k = v.pts.len();
                    let dir = v.pts[k - 2].sub(v.pts[k - 1]).normalized();
                    (center.add(dir.scale(r)), dir)
                };
                add(pt, dir, v.total_width());
            }
        }
    }
    centers
        .into_iter()
        .enumerate()
        .map(|(i, (c, dir, w))| Crosswalk {
            id: format!("cw{i}"),
            polygon: crosswalk_polygon(c, dir, w, d.crosswalk_width_m),
        })
        .collect()
}

/// Default fixed-time program: two green phases for the two approach-axis groups,
/// separated by all-red intervals.
fn build_signals(pg: &ProjectedGraph, edges: &[Edge], d: &NetworkDefaults) -> Vec<Signal> {
    let mut out = Vec::new();
    for n in &pg.signals {
        let nid = node_id(*n);
        let incoming: Vec<&Edge> = edges
            .iter()
            .filter(|e| e.to == nid && classify_highway(&e.highway) == WayCategory::Vehicle)
            .collect();
        if incoming.is_empty() {
            continue;
        }
        let axis = |e: &Edge| {
            let k = e.geometry.len();
            e.geometry[k - 1].sub(e.geometry[k - 2]).heading()
        };
        let h0 = axis(incoming[0]);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for e in &incoming {
            let diff = wrap_angle(axis(e) - h0).abs();
            let folded = diff.min(PI - diff);
            if folded < FRAC_PI_4 {
                a.push(e.id.clone());
            } else {
                b.push(e.id.clone());
            }
        }
        let program = if b.is_empty() {
            SignalProgram {
                cycle_s: d.signal_cycle_s,
                phases: vec![
                    SignalPhase { duration_s: d.signal_cycle_s - d.all_red_s, green: a },
                    SignalPhase { duration_s: d.all_red_s, green: vec![] },
                ],
            }
        } else {
            let g = d.signal_cycle_s / 2.0 - d.all_red_s;
            SignalProgram {
                cycle_s: d.signal_cycle_s,
                phases: vec![
                    SignalPhase { duration_s: g, green: a },
                    SignalPhase { duration_s: d.all_red_s, green: vec![] },
                    SignalPhase { duration_s: g, green: b },
                    SignalPhase { duration_s: d.all_red_s, green: vec![] },
                ],
            }
        };
        out.push(Signal { node: nid, program });
    }
    out
}

fn classify_highway(h: &str) -> WayCategory {
    let w = Way { nodes: vec![], tags: [("highway".to_string(), h.to_string())].into_iter().collect() };
    classify_way(&w)
}

pub(crate) fn edge_category(e: &Edge) -> WayCategory {
    classify_highway(&e.highway)
}
