mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use scenforge_core::geo::GeoPoint;
use scenforge_core::geom::{offset_polyline, polyline_length, Vec2};
use scenforge_core::map::{
    export_opendrive, export_scenario_json, export_sumo_plain, import_scenario_json, validate_network, BoundaryKind,
    RoadNetwork,
};
use scenforge_core::AgentClass;

use common::{assert_schema, deg_for_m, network_from_xml, osm_xml, roundabout_network, urban_network};

fn equator() -> GeoPoint {
    GeoPoint { lat: 0.0, lon: 0.0 }
}

fn straight_one_way(lanes: &str, maxspeed: &str) -> RoadNetwork {
    let xml = osm_xml(
        &[(1, 0.0, 0.0), (2, 0.0, deg_for_m(100.0))],
        &[(
            10,
            vec![1, 2],
            vec![("highway", "primary"), ("oneway", "yes"), ("lanes", lanes), ("maxspeed", maxspeed)],
        )],
    );
    network_from_xml(&xml, equator())
}

fn attr_values<'a>(xml: &'a str, attr: &str) -> Vec<&'a str> {
    let pat = format!(" {attr}=\"");
    xml.match_indices(&pat)
        .map(|(i, _)| {
            let rest = &xml[i + pat.len()..];
            &rest[..rest.find('"').unwrap()]
        })
        .collect()
}

#[test]
fn one_way_single_lane_boundaries_sit_at_half_width() {
    let n = straight_one_way("1", "50");
    assert_eq!(n.edges.len(), 1);
    assert_eq!(n.lanes.len(), 1);
    let lane = &n.lanes[0];
    assert!((lane.length() - 100.0).abs() < 1e-6);
    assert!(lane.centerline.iter().all(|p| p.y.abs() < 1e-9));

    let boundaries: Vec<_> = n.boundaries.iter().filter(|b| b.kind == BoundaryKind::RoadBoundary).collect();
    assert_eq!(boundaries.len(), 2);
    assert_eq!(n.boundaries.len(), 2);
    let mut ys: Vec<f64> = boundaries.iter().map(|b| b.polyline[0].y).collect();
    ys.sort_by(f64::total_cmp);
    assert!((ys[0] + 1.75).abs() < 1e-9 && (ys[1] - 1.75).abs() < 1e-9, "{ys:?}");
    for b in &boundaries {
        assert!(b.polyline.iter().all(|p| (p.y - b.polyline[0].y).abs() < 1e-9));
    }
}

#[test]
fn bidirectional_four_lanes_gives_two_edges_of_two() {
    let xml = osm_xml(
        &[(1, 0.0, 0.0), (2, 0.0, deg_for_m(200.0))],
        &[(10, vec![1, 2], vec![("highway", "primary"), ("lanes", "4")])],
    );
    let n = network_from_xml(&xml, equator());
    assert_eq!(n.edges.len(), 2);
    for e in &n.edges {
        assert_eq!(e.lanes.len(), 2, "{}", e.id);
    }
    // Forward edge heads east; right-hand traffic puts its lanes at negative y.
    let fwd = n.edges.iter().find(|e| e.id.ends_with("_f")).unwrap();
    let mut ys: Vec<f64> = n.edge_lanes(fwd).iter().map(|l| l.centerline[0].y).collect();
    ys.sort_by(f64::total_cmp);
    assert!((ys[0] + 5.25).abs() < 1e-9 && (ys[1] + 1.75).abs() < 1e-9, "{ys:?}");
}

#[test]
fn roundabout_circle_outranks_approaches() {
    let n = roundabout_network();
    let circle: Vec<_> = n.edges.iter().filter(|e| e.roundabout).collect();
    let approach: Vec<_> = n.edges.iter().filter(|e| !e.roundabout).collect();
    assert!(!circle.is_empty() && !approach.is_empty());
    let min_circle = circle.iter().map(|e| e.priority).min().unwrap();
    let max_approach = approach.iter().map(|e| e.priority).max().unwrap();
    assert!(min_circle > max_approach);
    // Circle is one-way: no reverse twins.
    assert!(circle.iter().all(|e| e.reverse_of.is_none()));
    // Four bidirectional approaches; the circle is split where they join it.
    assert_eq!(approach.len(), 8);
    assert_eq!(circle.len(), 4);
}

#[test]
fn urban_fixture_validates_and_has_signal_and_crosswalks() {
    let n = urban_network();
    let report = validate_network(&n);
    assert!(report.passes(), "{report:?}");
    assert_eq!(n.signals.len(), 1);
    assert_eq!(n.signals[0].node, "n1");
    let p = &n.signals[0].program;
    assert_eq!(p.cycle_s, 60.0);
    let incoming: Vec<String> = n
        .incoming("n1")
        .iter()
        .filter(|e| n.edge_allows(e, AgentClass::Vehicle))
        .map(|e| e.id.clone())
        .collect();
    assert_eq!(incoming.len(), 4);
    p.check(&incoming).unwrap();
    assert!(!n.crosswalks.is_empty());
    // Every approach gets green in exactly one non-all-red phase.
    for e in &incoming {
        assert_eq!(p.phases.iter().filter(|ph| ph.green.contains(e)).count(), 1);
    }
}

#[test]
fn validator_counts_duplicate_lane_ids() {
    let mut n = urban_network();
    let dup = n.lanes[0].clone();
    n.lanes.push(dup);
    let r = validate_network(&n);
    assert_eq!(r.duplicate_lane_ids, 1);
    assert!(!r.passes());
}

#[test]
fn validator_counts_disjoint_components() {
    let xml = osm_xml(
        &[(1, 0.0, 0.0), (2, 0.0, deg_for_m(100.0)), (3, 0.001, 0.0), (4, 0.001, deg_for_m(100.0))],
        &[
            (10, vec![1, 2], vec![("highway", "residential")]),
            (11, vec![3, 4], vec![("highway", "residential")]),
        ],
    );
    let n = network_from_xml(&xml, equator());
    assert_eq!(validate_network(&n).disconnected_components, 2);
}

#[test]
fn validator_flags_signal_missing_green() {
    let mut n = urban_network();
    n.signals[0].program.phases[0].green.clear();
    assert!(validate_network(&n).signals_without_program >= 1);
}

#[test]
fn sumo_two_nodes_one_edge() {
    let n = straight_one_way("1", "50");
    let s = export_sumo_plain(&n);
    assert_eq!(s.nodes_xml.matches("<node ").count(), 2);
    assert_eq!(s.edges_xml.matches("<edge ").count(), 1);
    assert!(s.edges_xml.contains("numLanes=\"1\""));
    // 50 km/h = 13.888.. m/s
    assert_eq!(attr_values(&s.edges_xml, "speed"), vec!["13.89"]);
    assert!(s.nodes_xml.starts_with("<?xml"));
    assert!(s.nodes_xml.contains("<nodes>") && s.edges_xml.contains("<edges>"));
}

#[test]
fn exports_are_byte_stable() {
    let a = urban_network();
    let b = urban_network();
    assert_eq!(export_sumo_plain(&a), export_sumo_plain(&b));
    assert_eq!(export_opendrive(&a), export_opendrive(&b));
    assert_eq!(export_scenario_json(&a), export_scenario_json(&b));
}

#[test]
fn sumo_elements_sorted_by_id() {
    let s = export_sumo_plain(&urban_network());
    let nodes = attr_values(&s.nodes_xml, "id");
    let mut sorted = nodes.clone();
    sorted.sort();
    assert_eq!(nodes, sorted);
    let edges: Vec<&str> = s.edges_xml.lines().filter(|l| l.contains("<edge ")).map(|l| attr_values(l, "id")[0]).collect();
    let mut sorted = edges.clone();
    sorted.sort();
    assert_eq!(edges, sorted);
}

#[test]
fn opendrive_straight_edge_single_line_record() {
    let xodr = export_opendrive(&straight_one_way("1", "50"));
    assert!(xodr.contains("revMajor=\"1\" revMinor=\"6\""));
    assert_eq!(xodr.matches("<geometry ").count(), 1);
    assert_eq!(xodr.matches("<line/>").count(), 1);
    assert_eq!(attr_values(&xodr, "s")[0], "0");
    let len: f64 = attr_values(&xodr, "length")[1].parse().unwrap();
    assert!((len - 100.0).abs() < 1e-6);
    assert!(!xodr.contains("<arc") && !xodr.contains("paramPoly3"));
}

#[test]
fn opendrive_cumulative_s_on_bent_polyline() {
    // Three vertices: 60 m east then 80 m north.
    let d60 = deg_for_m(60.0);
    let d80 = deg_for_m(80.0);
    let xml = osm_xml(
        &[(1, 0.0, 0.0), (2, 0.0, d60), (3, d80, d60)],
        &[(10, vec![1, 2, 3], vec![("highway", "residential"), ("oneway", "yes")])],
    );
    let n = network_from_xml(&xml, equator());
    let xodr = export_opendrive(&n);
    let road = &xodr[xodr.find("<road ").unwrap()..];
    let geoms: Vec<&str> = road.lines().filter(|l| l.contains("<geometry ")).collect();
    assert_eq!(geoms.len(), 2);
    let s: Vec<f64> = geoms.iter().map(|g| attr_values(g, "s")[0].parse().unwrap()).collect();
    let l: Vec<f64> = geoms.iter().map(|g| attr_values(g, "length")[0].parse().unwrap()).collect();
    assert_eq!(s[0], 0.0);
    assert!((s[1] - l[0]).abs() < 1e-12);
    assert!((l[0] + l[1] - polyline_length(&n.edges[0].geometry)).abs() < 1e-9);
    assert!((l[0] - 60.0).abs() < 1e-6 && (l[1] - 80.0).abs() < 1e-6);
}

#[test]
fn scenario_json_empty_crosswalks_and_lane_center() {
    let n = straight_one_way("1", "50");
    let text = export_scenario_json(&n);
    assert!(text.contains("\"crosswalks\": []"));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let centers: Vec<_> =
        v["map_features"].as_array().unwrap().iter().filter(|f| f["type"] == "lane_center").collect();
    assert_eq!(centers.len(), 1);
    assert_eq!(centers[0]["polyline"].as_array().unwrap().len(), n.lanes[0].centerline.len());
    assert_schema("map.schema.json", &v);
}

fn assert_networks_close(a: &RoadNetwork, b: &RoadNetwork) {
    let close = |p: Vec2, q: Vec2| (p.x - q.x).abs() <= 1e-6 && (p.y - q.y).abs() <= 1e-6;
    assert_eq!(a.edges.len(), b.edges.len());
    assert_eq!(a.lanes.len(), b.lanes.len());
    assert_eq!(a.boundaries.len(), b.boundaries.len());
    assert_eq!(a.signals, b.signals);
    for (x, y) in a.lanes.iter().zip(&b.lanes) {
        assert_eq!((&x.id, &x.edge, x.index, &x.allowed), (&y.id, &y.edge, y.index, &y.allowed));
        assert!(x.centerline.iter().zip(&y.centerline).all(|(p, q)| close(*p, *q)));
    }
    for (x, y) in a.edges.iter().zip(&b.edges) {
        assert_eq!((&x.id, &x.from, &x.to, &x.lanes, x.priority), (&y.id, &y.from, &y.to, &y.lanes, y.priority));
        assert!(x.geometry.iter().zip(&y.geometry).all(|(p, q)| close(*p, *q)));
    }
    for (x, y) in a.crosswalks.iter().zip(&b.crosswalks) {
        assert!(x.polygon.iter().zip(&y.polygon).all(|(p, q)| close(*p, *q)));
    }
}

#[test]
fn scenario_json_round_trip() {
    for n in [urban_network(), roundabout_network()] {
        let text = export_scenario_json(&n);
        assert_schema("map.schema.json", &serde_json::from_str(&text).unwrap());
        let back = import_scenario_json(&text).unwrap();
        assert_networks_close(&n, &back);
        assert_eq!(export_scenario_json(&back), text);
    }
}

#[test]
fn lane_count_agrees_across_exports() {
    for n in [urban_network(), roundabout_network(), straight_one_way("2", "50")] {
        let total = n.lanes.len();
        let sumo = export_sumo_plain(&n);
        let sumo_lanes: usize = attr_values(&sumo.edges_xml, "numLanes").iter().map(|v| v.parse::<usize>().unwrap()).sum();
        let xodr = export_opendrive(&n);
        let xodr_lanes = xodr.matches("<lane id=\"").count() - xodr.matches("<lane id=\"0\"").count();
        let v: serde_json::Value = serde_json::from_str(&export_scenario_json(&n)).unwrap();
        let json_lanes = v["map_features"].as_array().unwrap().iter().filter(|f| f["type"] == "lane_center").count();
        assert_eq!((sumo_lanes, xodr_lanes, json_lanes), (total, total, total));
    }
}

#[test]
fn lane_on_circular_one_way_keeps_arc_length() {
    // 72-vertex loop of radius 60 m travelled counter-clockwise; two lanes offset to
    // radius 61.75 (outer, lane 0) and 58.25 (inner, lane 1).
    let r = 60.0;
    let k = 72;
    let mut nodes = Vec::new();
    for i in 0..k {
        let a = 2.0 * PI * i as f64 / k as f64;
        nodes.push((i as i64 + 1, deg_for_m(r * a.sin()), deg_for_m(r * a.cos())));
    }
    let mut refs: Vec<i64> = (1..=k as i64).collect();
    refs.push(1);
    let xml = osm_xml(&nodes, &[(1, refs, vec![("highway", "secondary"), ("oneway", "yes"), ("lanes", "2")])]);
    let n = network_from_xml(&xml, equator());
    assert!(validate_network(&n).passes());
    for lane in &n.lanes {
        let expected_r = if lane.index == 0 { r + 1.75 } else { r - 1.75 };
        let avg_r = lane.centerline.iter().map(|p| p.norm()).sum::<f64>() / lane.centerline.len() as f64;
        assert!((avg_r - expected_r).abs() < 0.05, "lane {} radius {avg_r}", lane.id);
        let rel = (lane.length() - 2.0 * PI * expected_r).abs() / (2.0 * PI * expected_r);
        assert!(rel < 0.02, "lane {} rel err {rel}", lane.id);
    }
}

proptest! {
    #[test]
    fn offset_circle_arc_length_within_two_percent(r in 10.0f64..300.0, off in -4.0f64..4.0, k in 48usize..200) {
        prop_assume!(r - off.abs() >= 10.0);
        let mut pts: Vec<Vec2> = (0..=k)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / k as f64;
                Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        pts[k] = pts[0];
        // Counter-clockwise: a positive (rightward) offset moves outward.
        let shifted = offset_polyline(&pts, off);
        let analytic = 2.0 * PI * (r + off);
        let rel = (polyline_length(&shifted) - analytic).abs() / analytic;
        prop_assert!(rel < 0.02, "rel {}", rel);
    }
}
