mod common;

use proptest::prelude::*;
use scenforge_core::demand::{
    demand_from_speeds, flow_from_density, greenshields_density, manual_demand, parse_speed_feed, route_between,
    spawn_schedule, DemandEntry, DemandError, DemandTable, GreenshieldsParams, ManualFlow, SegmentSpeed,
    SpeedDemandOptions,
};
use scenforge_core::geo::GeoPoint;
use scenforge_core::map::RoadNetwork;
use scenforge_core::AgentClass;

use common::{assert_schema, deg_for_m, network_from_xml, osm_xml, roundabout_network, urban_network};

fn two_lane_one_way() -> RoadNetwork {
    let xml = osm_xml(
        &[(1, 0.0, 0.0), (2, 0.0, deg_for_m(500.0))],
        &[(1, vec![1, 2], vec![("highway", "primary"), ("oneway", "yes"), ("lanes", "2"), ("maxspeed", "50")])],
    );
    network_from_xml(&xml, GeoPoint { lat: 0.0, lon: 0.0 })
}

fn free_flow_everywhere(n: &RoadNetwork) -> Vec<SegmentSpeed> {
    n.edges
        .iter()
        .map(|e| SegmentSpeed { edge_id: e.id.clone(), v_obs: e.speed_limit, v_free: e.speed_limit })
        .collect()
}

fn single_route(flow: f64, n: &RoadNetwork) -> DemandTable {
    DemandTable {
        entries: vec![DemandEntry {
            id: "r0".into(),
            route: vec![n.edges[0].id.clone()],
            class: AgentClass::Vehicle,
            flow,
        }],
    }
}

#[test]
fn flow_from_greenshields_example() {
    let k = greenshields_density(15.0, 30.0, 120.0).unwrap();
    assert_eq!(k, 60.0);
    // 60 veh/km at 54 km/h
    assert!((flow_from_density(k, 15.0).unwrap() - 60.0 * 54.0).abs() < 1e-9);
}

#[test]
fn flow_maximum_sits_at_half_free_speed() {
    let (v_free, k_jam) = (30.0, 120.0);
    let steps = 1000;
    let h = v_free / steps as f64;
    let (mut best_v, mut best_q) = (0.0, f64::MIN);
    for i in 0..=steps {
        let v = i as f64 * h;
        let q = flow_from_density(greenshields_density(v, v_free, k_jam).unwrap(), v).unwrap();
        if q > best_q {
            best_q = q;
            best_v = v;
        }
    }
    assert!((best_v - v_free / 2.0).abs() <= h);
    // k_jam * v_free * 0.9 is the analytic peak (quarter of k_jam * v_free * 3.6).
    assert!((best_q - k_jam * v_free * 0.9).abs() < 1e-6);
}

#[test]
fn single_edge_network_one_vehicle_entry() {
    let n = two_lane_one_way();
    assert_eq!(n.edges.len(), 1);
    let speeds = vec![SegmentSpeed { edge_id: n.edges[0].id.clone(), v_obs: 15.0, v_free: 30.0 }];
    let d = demand_from_speeds(&speeds, GreenshieldsParams { k_jam: 120.0 }, &n, &SpeedDemandOptions::default())
        .unwrap();
    let vehicles: Vec<_> = d.entries.iter().filter(|e| e.class == AgentClass::Vehicle).collect();
    assert_eq!(vehicles.len(), 1);
    assert!((vehicles[0].flow - 6480.0).abs() < 1e-9);
    d.validate(&n).unwrap();
}

#[test]
fn free_flow_gives_zero_vehicle_flow() {
    let n = roundabout_network();
    let d = demand_from_speeds(&free_flow_everywhere(&n), GreenshieldsParams::default(), &n, &Default::default())
        .unwrap();
    assert!(d.entries.iter().filter(|e| e.class == AgentClass::Vehicle).all(|e| e.flow == 0.0));
    assert_eq!(d.total_flow(AgentClass::Vehicle), 0.0);
}

#[test]
fn missing_edges_fall_back_to_default_flow() {
    let n = two_lane_one_way();
    let opts = SpeedDemandOptions { default_flow_vph: 420.0, ..Default::default() };
    let d = demand_from_speeds(&[], GreenshieldsParams::default(), &n, &opts).unwrap();
    assert_eq!(d.total_flow(AgentClass::Vehicle), 420.0);
    assert!((d.total_flow(AgentClass::Cyclist) - 21.0).abs() < 1e-9);
}

#[test]
fn unknown_edge_in_feed_is_rejected() {
    let n = two_lane_one_way();
    let speeds = vec![SegmentSpeed { edge_id: "nope".into(), v_obs: 1.0, v_free: 2.0 }];
    assert!(matches!(
        demand_from_speeds(&speeds, GreenshieldsParams::default(), &n, &Default::default()),
        Err(DemandError::UnknownEdge(_))
    ));
}

#[test]
fn roundabout_routes_start_at_entries_and_are_connected() {
    let n = roundabout_network();
    let d = demand_from_speeds(&[], GreenshieldsParams::default(), &n, &Default::default()).unwrap();
    d.validate(&n).unwrap();
    let vehicles: Vec<_> = d.entries.iter().filter(|e| e.class == AgentClass::Vehicle).collect();
    assert!(vehicles.len() >= 4);
    for e in &vehicles {
        let first = n.edge(&e.route[0]).unwrap();
        assert!(!first.roundabout, "route {} starts on the circle", e.id);
        let last = n.edge(e.route.last().unwrap()).unwrap();
        assert!(n.successors(last, AgentClass::Vehicle).is_empty() || e.route.len() > 1);
    }
    // Each approach injects its default flow; the total entering equals four approaches.
    assert!((d.total_flow(AgentClass::Vehicle) - 4.0 * 300.0).abs() < 1e-6);
}

#[test]
fn urban_pedestrian_demand_uses_walkable_edges() {
    let n = urban_network();
    let d = demand_from_speeds(&[], GreenshieldsParams::default(), &n, &Default::default()).unwrap();
    let peds: Vec<_> = d.entries.iter().filter(|e| e.class == AgentClass::Pedestrian).collect();
    assert!(!peds.is_empty());
    for p in &peds {
        for e in &p.route {
            assert!(n.edge_allows(n.edge(e).unwrap(), AgentClass::Pedestrian));
        }
    }
    let ratio = d.total_flow(AgentClass::Pedestrian) / d.total_flow(AgentClass::Vehicle);
    assert!((ratio - 0.10).abs() < 1e-9);
}

#[test]
fn manual_demand_routes_between_edges() {
    let n = roundabout_network();
    let entry = n.edges.iter().find(|e| e.id.starts_with("1001_") && e.to == "n1").unwrap();
    let exit = n.edges.iter().find(|e| e.id.starts_with("1003_") && e.from == "n5").unwrap();
    let route = route_between(&n, &entry.id, &exit.id, AgentClass::Vehicle).unwrap();
    assert_eq!(route.first().unwrap(), &entry.id);
    assert_eq!(route.last().unwrap(), &exit.id);
    let d = manual_demand(
        &[ManualFlow { route: None, from: Some(entry.id.clone()), to: Some(exit.id.clone()), class: AgentClass::Vehicle, flow: 200.0 }],
        &n,
    )
    .unwrap();
    assert_eq!(d.entries[0].route, route);
    let bad = ManualFlow { route: Some(vec![entry.id.clone(), entry.id.clone()]), from: None, to: None, class: AgentClass::Vehicle, flow: 1.0 };
    assert!(matches!(manual_demand(&[bad], &n), Err(DemandError::DisconnectedRoute(_))));
}

#[test]
fn zero_flow_gives_empty_schedule() {
    let n = two_lane_one_way();
    assert!(spawn_schedule(&single_route(0.0, &n), &n, 1000.0, 7).unwrap().is_empty());
}

#[test]
fn schedule_mean_count_over_seeds() {
    let n = two_lane_one_way();
    let d = single_route(360.0, &n);
    let total: usize = (0..200u64).map(|s| spawn_schedule(&d, &n, 1000.0, s).unwrap().len()).sum();
    let mean = total as f64 / 200.0;
    assert!((90.0..=110.0).contains(&mean), "mean {mean}");
}

#[test]
fn schedule_is_deterministic_and_sorted() {
    let n = roundabout_network();
    let d = demand_from_speeds(&[], GreenshieldsParams::default(), &n, &Default::default()).unwrap();
    let a = spawn_schedule(&d, &n, 600.0, 42).unwrap();
    let b = spawn_schedule(&d, &n, 600.0, 42).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!(a.windows(2).all(|w| w[0].t <= w[1].t));
    assert!(a.iter().all(|e| e.t >= 0.0 && e.t <= 600.0));
    // Initial speed is the lower of the entry limit (40 km/h) and the class cruise speed.
    for e in &a {
        let limit = n.edge(&e.route[0]).unwrap().speed_limit;
        assert_eq!(e.speed, limit.min(e.class.default_speed()));
    }
    assert_ne!(a, spawn_schedule(&d, &n, 600.0, 43).unwrap());
}

/// One-sample Kolmogorov-Smirnov statistic against Exponential(rate).
fn ks_exponential(samples: &mut [f64], rate: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-rate * x).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn inter_arrivals_pass_ks_against_exponential() {
    let n = two_lane_one_way();
    let d = single_route(3600.0, &n);
    let ev = spawn_schedule(&d, &n, 11_000.0, 2024).unwrap();
    assert!(ev.len() > 10_000);
    let mut gaps: Vec<f64> = std::iter::once(ev[0].t).chain(ev.windows(2).map(|w| w[1].t - w[0].t)).take(10_000).collect();
    let stat = ks_exponential(&mut gaps, 1.0);
    // Asymptotic critical value at alpha = 0.01.
    assert!(stat < 1.6276 / (10_000f64).sqrt(), "D = {stat}");
}

#[test]
fn speed_feed_fixture_matches_schema() {
    let text = r#"{"units":"km/h","segments":[{"edge_id":"1_0_f","currentSpeed":30,"freeFlowSpeed":50}]}"#;
    assert_schema("speeds.schema.json", &serde_json::from_str(text).unwrap());
    let s = parse_speed_feed(text.as_bytes()).unwrap();
    assert!((s[0].v_free - 50.0 / 3.6).abs() < 1e-12);
}

proptest! {
    #[test]
    fn density_is_affine_and_decreasing(v_free in 1.0f64..60.0, k_jam in 1.0f64..300.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let k_lo = greenshields_density(lo * v_free, v_free, k_jam).unwrap();
        let k_hi = greenshields_density(hi * v_free, v_free, k_jam).unwrap();
        prop_assert!(k_lo >= k_hi);
        let mid = greenshields_density((lo + hi) / 2.0 * v_free, v_free, k_jam).unwrap();
        prop_assert!((mid - (k_lo + k_hi) / 2.0).abs() < 1e-9 * k_jam);
        prop_assert_eq!(greenshields_density(v_free, v_free, k_jam).unwrap(), 0.0);
        prop_assert_eq!(greenshields_density(0.0, v_free, k_jam).unwrap(), k_jam);
    }

    #[test]
    fn flow_curve_is_concave(v_free in 1.0f64..60.0, k_jam in 1.0f64..300.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let q = |v: f64| flow_from_density(greenshields_density(v, v_free, k_jam).unwrap(), v).unwrap();
        let (x, y) = (a * v_free, b * v_free);
        prop_assert!(q((x + y) / 2.0) + 1e-9 >= (q(x) + q(y)) / 2.0);
    }

    #[test]
    fn schedule_is_pure(seed in any::<u64>(), flow in 1.0f64..2000.0) {
        let n = two_lane_one_way();
        let d = single_route(flow, &n);
        prop_assert_eq!(spawn_schedule(&d, &n, 120.0, seed).unwrap(), spawn_schedule(&d, &n, 120.0, seed).unwrap());
    }
}
