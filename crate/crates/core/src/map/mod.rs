//! Lane-level road network built from a projected OSM graph, and its exporters.

mod build;
mod opendrive;
mod projection;
mod scenario_json;
mod sumo;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::class::AgentClass;
use crate::geo::GeoPoint;
use crate::geom::{polyline_length, Vec2};

pub use build::{build_network, classify_way, WayCategory};
pub use opendrive::export_opendrive;
pub use projection::{to_local_frame, LocalProjection, ProjectedGraph, MAX_PROJECTION_SPAN_DEG};
pub use scenario_json::{export_scenario_json, import_scenario_json};
pub use sumo::{export_sumo_plain, SumoPlain};
pub use validate::{validate_network, ValidationReport};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("point {lat},{lon} is more than {limit}° from the projection origin")]
    OutOfRange { lat: f64, lon: f64, limit: f64 },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("network is empty")]
    EmptyNetwork,
    #[error("unknown edge {0}")]
    UnknownEdge(String),
    #[error("map JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geo(#[from] crate::geo::GeoError),
}

pub type Result<T> = std::result::Result<T, MapError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrivingSide {
    #[default]
    Right,
    Left,
}

/// Knobs for turning OSM tags into lanes, speeds and signal programs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkDefaults {
    pub lane_width_m: f64,
    pub path_width_m: f64,
    pub driving_side: DrivingSide,
    pub signal_cycle_s: f64,
    pub all_red_s: f64,
    pub crosswalk_width_m: f64,
    /// Extra clearance added to the widest incident road half-width when trimming lanes
    /// back from a junction node.
    pub junction_margin_m: f64,
}

impl Default for NetworkDefaults {
    fn default() -> Self {
        Self {
            lane_width_m: 3.5,
            path_width_m: 2.0,
            driving_side: DrivingSide::Right,
            signal_cycle_s: 60.0,
            all_red_s: 3.0,
            crosswalk_width_m: 3.0,
            junction_margin_m: 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Priority,
    TrafficLight,
    DeadEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetNode {
    pub id: String,
    pub xy: Vec2,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Lane ids ordered from the outermost (curb-side) lane inward.
    pub lanes: Vec<String>,
    /// m/s
    pub speed_limit: f64,
    pub priority: i32,
    /// Reference line in travel direction, trimmed at junctions.
    pub geometry: Vec<Vec2>,
    pub way_id: i64,
    pub highway: String,
    #[serde(default)]
    pub roundabout: bool,
    /// Opposite-direction twin built from the same way segment.
    #[serde(default)]
    pub reverse_of: Option<String>,
}

impl Edge {
    pub fn length(&self) -> f64 {
        polyline_length(&self.geometry)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: String,
    pub edge: String,
    pub index: usize,
    pub centerline: Vec<Vec2>,
    pub width: f64,
    pub allowed: Vec<AgentClass>,
}

impl Lane {
    pub fn length(&self) -> f64 {
        polyline_length(&self.centerline)
    }

    pub fn allows(&self, c: AgentClass) -> bool {
        self.allowed.contains(&c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    LaneLine,
    RoadBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub id: String,
    pub edge: String,
    pub kind: BoundaryKind,
    pub polyline: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crosswalk {
    pub id: String,
    pub polygon: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPhase {
    pub duration_s: f64,
    pub green: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalProgram {
    pub cycle_s: f64,
    pub phases: Vec<SignalPhase>,
}

impl SignalProgram {
    /// Index of the active phase at time `t`.
    pub fn phase_at(&self, t: f64) -> usize {
        if self.phases.is_empty() || self.cycle_s <= 0.0 {
            return 0;
        }
        let mut r = t.rem_euclid(self.cycle_s);
        for (i, p) in self.phases.iter().enumerate() {
            if r < p.duration_s {
                return i;
            }
            r -= p.duration_s;
        }
        self.phases.len() - 1
    }

    pub fn is_green(&self, edge: &str, t: f64) -> bool {
        self.phases
            .get(self.phase_at(t))
            .is_some_and(|p| p.green.iter().any(|e| e == edge))
    }

    pub fn check(&self, incoming: &[String]) -> std::result::Result<(), String> {
        let total: f64 = self.phases.iter().map(|p| p.duration_s).sum();
        if (total - self.cycle_s).abs() > 1e-9 {
            return Err(format!("phase durations sum to {total}, cycle is {}", self.cycle_s));
        }
        for e in incoming {
            if !self.phases.iter().any(|p| p.green.contains(e)) {
                return Err(format!("edge {e} never receives green"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub node: String,
    pub program: SignalProgram,
}

/// Lane-level road network in a local metric frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub origin: GeoPoint,
    pub driving_side: DrivingSide,
    pub nodes: Vec<NetNode>,
    pub edges: Vec<Edge>,
    pub lanes: Vec<Lane>,
    pub boundaries: Vec<Boundary>,
    pub crosswalks: Vec<Crosswalk>,
    pub signals: Vec<Signal>,
}

impl RoadNetwork {
    pub fn edge(&self, id: &str) -> Option<&Edge> {
        self.edges.iter().find(|e| e.id == id)
    }

    pub fn lane(&self, id: &str) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id == id)
    }

    pub fn node(&self, id: &str) -> Option<&NetNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn edge_index(&self) -> BTreeMap<&str, &Edge> {
        self.edges.iter().map(|e| (e.id.as_str(), e)).collect()
    }

    pub fn lane_index(&self) -> BTreeMap<&str, &Lane> {
        self.lanes.iter().map(|l| (l.id.as_str(), l)).collect()
    }

    /// Lanes of `edge` in index order.
    pub fn edge_lanes(&self, edge: &Edge) -> Vec<&Lane> {
        let idx = self.lane_index();
        edge.lanes.iter().filter_map(|id| idx.get(id.as_str()).copied()).collect()
    }

    pub fn edge_allows(&self, edge: &Edge, c: AgentClass) -> bool {
        self.edge_lanes(edge).iter().any(|l| l.allows(c))
    }

    pub fn signal_at(&self, node: &str) -> Option<&Signal> {
        self.signals.iter().find(|s| s.node == node)
    }

    pub fn incoming(&self, node: &str) -> Vec<&Edge> {
        self.edges.iter().filter(|e| e.to == node).collect()
    }

    pub fn outgoing(&self, node: &str) -> Vec<&Edge> {
        self.edges.iter().filter(|e| e.from == node).collect()
    }

    /// Edges a `class` agent may continue onto from `edge`, U-turns excluded, sorted by id.
    pub fn successors(&self, edge: &Edge, class: AgentClass) -> Vec<&Edge> {
        self.edges
            .iter()
            .filter(|e| e.from == edge.to && edge.reverse_of.as_deref() != Some(e.id.as_str()))
            .filter(|e| self.edge_allows(e, class))
            .collect()
    }

    /// Edges that feed into `edge` for `class`, U-turns excluded.
    pub fn predecessors(&self, edge: &Edge, class: AgentClass) -> Vec<&Edge> {
        self.edges
            .iter()
            .filter(|e| e.to == edge.from && edge.reverse_of.as_deref() != Some(e.id.as_str()))
            .filter(|e| self.edge_allows(e, class))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_phase_lookup() {
        let p = SignalProgram {
            cycle_s: 60.0,
            phases: vec![
                SignalPhase { duration_s: 27.0, green: vec!["a".into()] },
                SignalPhase { duration_s: 3.0, green: vec![] },
                SignalPhase { duration_s: 27.0, green: vec!["b".into()] },
                SignalPhase { duration_s: 3.0, green: vec![] },
            ],
        };
        assert!(p.is_green("a", 0.0));
        assert!(!p.is_green("a", 28.0));
        assert!(p.is_green("b", 31.0));
        assert!(p.is_green("a", 61.0));
        assert!(p.check(&["a".into(), "b".into()]).is_ok());
        assert!(p.check(&["c".into()]).is_err());
    }
}
