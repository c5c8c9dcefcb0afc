use serde::{Deserialize, Serialize};

use super::{
    Boundary, BoundaryKind, Crosswalk, DrivingSide, Edge, Lane, MapError, NetNode, Result, RoadNetwork, Signal,
};
use crate::class::AgentClass;
use crate::geo::GeoPoint;
use crate::geom::Vec2;

pub const MAP_FORMAT: &str = "scenforge-map";
pub const MAP_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum MapFeature {
    LaneCenter {
        id: String,
        edge: String,
        index: usize,
        width: f64,
        allowed: Vec<AgentClass>,
        polyline: Vec<[f64; 2]>,
    },
    LaneLine {
        id: String,
        edge: String,
        polyline: Vec<[f64; 2]>,
    },
    RoadBoundary {
        id: String,
        edge: String,
        polyline: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonCrosswalk {
    id: String,
    polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonNode {
    id: String,
    x: f64,
    y: f64,
    kind: super::NodeKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonEdge {
    id: String,
    from: String,
    to: String,
    lanes: Vec<String>,
    speed_limit: f64,
    priority: i32,
    geometry: Vec<[f64; 2]>,
    way_id: i64,
    highway: String,
    roundabout: bool,
    reverse_of: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapDocument {
    format: String,
    version: u32,
    origin: GeoPoint,
    driving_side: DrivingSide,
    nodes: Vec<JsonNode>,
    edges: Vec<JsonEdge>,
    map_features: Vec<MapFeature>,
    crosswalks: Vec<JsonCrosswalk>,
    signals: Vec<Signal>,
}

fn pts(v: &[Vec2]) -> Vec<[f64; 2]> {
    v.iter().map(|p| [p.x, p.y]).collect()
}

fn vecs(v: &[[f64; 2]]) -> Vec<Vec2> {
    v.iter().map(|p| Vec2::new(p[0], p[1])).collect()
}

/// Scenario-style map JSON: topology plus a flat `map_features` list of lane centers and
/// boundaries, crosswalk polygons and signal programs.
pub fn export_scenario_json(n: &RoadNetwork) -> String {
    let mut features = Vec::with_capacity(n.lanes.len() + n.boundaries.len());
    for l in &n.lanes {
        features.push(MapFeature::LaneCenter {
            id: l.id.clone(),
            edge: l.edge.clone(),
            index: l.index,
            width: l.width,
            allowed: l.allowed.clone(),
            polyline: pts(&l.centerline),
        });
    }
    for b in &n.boundaries {
        let (id, edge, polyline) = (b.id.clone(), b.edge.clone(), pts(&b.polyline));
        features.push(match b.kind {
            BoundaryKind::LaneLine => MapFeature::LaneLine { id, edge, polyline },
            BoundaryKind::RoadBoundary => MapFeature::RoadBoundary { id, edge, polyline },
        });
    }
    let doc = MapDocument {
        format: MAP_FORMAT.into(),
        version: MAP_VERSION,
        origin: n.origin,
        driving_side: n.driving_side,
        nodes: n.nodes.iter().map(|x| JsonNode { id: x.id.clone(), x: x.xy.x, y: x.xy.y, kind: x.kind }).collect(),
        edges: n
            .edges
            .iter()
            .map(|e| JsonEdge {
                id: e.id.clone(),
                from: e.from.clone(),
                to: e.to.clone(),
                lanes: e.lanes.clone(),
                speed_limit: e.speed_limit,
                priority: e.priority,
                geometry: pts(&e.geometry),
                way_id: e.way_id,
                highway: e.highway.clone(),
                roundabout: e.roundabout,
                reverse_of: e.reverse_of.clone(),
            })
            .collect(),
        map_features: features,
        crosswalks: n.crosswalks.iter().map(|c| JsonCrosswalk { id: c.id.clone(), polygon: pts(&c.polygon) }).collect(),
        signals: n.signals.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("map document serializes")
}

pub fn import_scenario_json(s: &str) -> Result<RoadNetwork> {
    let doc: MapDocument = serde_json::from_str(s)?;
    if doc.format != MAP_FORMAT {
        return Err(MapError::DegenerateGeometry(format!("unexpected map format {:?}", doc.format)));
    }
    let mut lanes = Vec::new();
    let mut boundaries = Vec::new();
    for f in doc.map_features {
        match f {
            MapFeature::LaneCenter { id, edge, index, width, allowed, polyline } => {
                lanes.push(Lane { id, edge, index, centerline: vecs(&polyline), width, allowed })
            }
            MapFeature::LaneLine { id, edge, polyline } => {
                boundaries.push(Boundary { id, edge, kind: BoundaryKind::LaneLine, polyline: vecs(&polyline) })
            }
            MapFeature::RoadBoundary { id, edge, polyline } => {
                boundaries.push(Boundary { id, edge, kind: BoundaryKind::RoadBoundary, polyline: vecs(&polyline) })
            }
        }
    }
    Ok(RoadNetwork {
        origin: doc.origin,
        driving_side: doc.driving_side,
        nodes: doc.nodes.into_iter().map(|x| NetNode { id: x.id, xy: Vec2::new(x.x, x.y), kind: x.kind }).collect(),
        edges: doc
            .edges
            .into_iter()
            .map(|e| Edge {
                id: e.id,
                from: e.from,
                to: e.to,
                lanes: e.lanes,
                speed_limit: e.speed_limit,
                priority: e.priority,
                geometry: vecs(&e.geometry),
                way_id: e.way_id,
                highway: e.highway,
                roundabout: e.roundabout,
                reverse_of: e.reverse_of,
            })
            .collect(),
        lanes,
        boundaries,
        crosswalks: doc.crosswalks.into_iter().map(|c| Crosswalk { id: c.id, polygon: vecs(&c.polygon) }).collect(),
        signals: doc.signals,
    })
}
