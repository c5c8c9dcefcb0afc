#![allow(dead_code)]

use std::path::PathBuf;

use scenforge_core::geo::{parse_osm, GeoGraph, GeoPoint};
use scenforge_core::map::{build_network, to_local_frame, NetworkDefaults, RoadNetwork};

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(name: &str) -> PathBuf {
    workspace_root().join("fixtures").join(name)
}

pub fn load_graph(name: &str) -> GeoGraph {
    let bytes = std::fs::read(fixture(name)).unwrap();
    parse_osm(&bytes).unwrap().graph
}

pub fn roundabout_center() -> GeoPoint {
    GeoPoint { lat: 42.31674, lon: -83.7077 }
}

pub fn network_for(name: &str, origin: GeoPoint) -> RoadNetwork {
    let g = load_graph(name);
    let pg = to_local_frame(&g, origin).unwrap();
    build_network(&pg, &NetworkDefaults::default()).unwrap()
}

pub fn roundabout_network() -> RoadNetwork {
    network_for("roundabout.osm", roundabout_center())
}

pub fn urban_network() -> RoadNetwork {
    network_for("urban.osm", GeoPoint { lat: 40.0, lon: -75.0 })
}

pub fn assert_schema(schema_file: &str, doc: &serde_json::Value) {
    let text = std::fs::read_to_string(workspace_root().join("schemas").join(schema_file)).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&text).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let msgs: Vec<String> = match compiled.validate(doc) {
        Ok(()) => Vec::new(),
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    assert!(msgs.is_empty(), "{schema_file}: {msgs:?}");
}

/// Minimal OSM document from `(id, lat, lon)` nodes and `(id, refs, tags)` ways.
pub fn osm_xml(nodes: &[(i64, f64, f64)], ways: &[(i64, Vec<i64>, Vec<(&str, &str)>)]) -> String {
    let mut s = String::from("<osm version=\"0.6\">\n");
    for (id, lat, lon) in nodes {
        s.push_str(&format!("<node id=\"{id}\" lat=\"{lat}\" lon=\"{lon}\"/>\n"));
    }
    for (id, refs, tags) in ways {
        s.push_str(&format!("<way id=\"{id}\">"));
        for r in refs {
            s.push_str(&format!("<nd ref=\"{r}\"/>"));
        }
        for (k, v) in tags {
            s.push_str(&format!("<tag k=\"{k}\" v=\"{v}\"/>"));
        }
        s.push_str("</way>\n");
    }
    s.push_str("</osm>\n");
    s
}

pub fn network_from_xml(xml: &str, origin: GeoPoint) -> RoadNetwork {
    let g = parse_osm(xml.as_bytes()).unwrap().graph;
    build_network(&to_local_frame(&g, origin).unwrap(), &NetworkDefaults::default()).unwrap()
}

/// Degrees of longitude spanning `m` metres on the equator.
pub fn deg_for_m(m: f64) -> f64 {
    m / (6_371_000.0 * std::f64::consts::PI / 180.0)
}
