//! Retrieval of raw OpenStreetMap data and reduction to a road-relevant graph.

mod ops;
mod osm;
mod route;
mod source;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ops::{clip_bbox, clip_radius, filter_road_types};
pub use osm::{parse_osm, serialize_osm, ParsedOsm};
pub use route::{is_vehicle_class, shortest_route, travel_directions, RouteResult, SNAP_LIMIT_M};
pub use source::{retrieve, FileSource, MapSource, OverpassSource};

/// Sphere radius used for every great-circle and tangent-plane computation.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Resource guard for radius retrieval.
pub const MAX_RADIUS_M: f64 = 5_000.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("malformed OSM XML: {0}")]
    MalformedXml(String),
    #[error("extract contains no highway-tagged ways")]
    EmptyExtract,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("no graph node within {limit_m} m of ({lat}, {lon})")]
    NoSnap { lat: f64, lon: f64, limit_m: f64 },
    #[error("destination unreachable from origin")]
    Unreachable,
    #[error("map source failure: {0}")]
    Source(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeoError>;

/// WGS-84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = Self { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lat.is_finite() || !self.lon.is_finite() {
            return Err(GeoError::InvalidQuery("non-finite coordinate".into()));
        }
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(GeoError::InvalidQuery(format!(
                "coordinate out of range: ({}, {})",
                self.lat, self.lon
            )));
        }
        Ok(())
    }
}

/// Haversine great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = la2 - la1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RetrievalQuery {
    Radius {
        center: GeoPoint,
        radius_m: f64,
    },
    Region {
        south_west: GeoPoint,
        north_east: GeoPoint,
        #[serde(default)]
        road_types: BTreeSet<String>,
    },
    Route {
        origin: GeoPoint,
        dest: GeoPoint,
        corridor_m: f64,
    },
}

impl RetrievalQuery {
    pub fn validate(&self) -> Result<()> {
        match self {
            RetrievalQuery::Radius { center, radius_m } => {
                center.validate()?;
                if !(radius_m.is_finite() && *radius_m > 0.0) {
                    return Err(GeoError::InvalidQuery("radius_m must be > 0".into()));
                }
                if *radius_m > MAX_RADIUS_M {
                    return Err(GeoError::InvalidQuery(format!(
                        "radius_m {radius_m} exceeds the {MAX_RADIUS_M} m cap"
                    )));
                }
            }
            RetrievalQuery::Region { south_west, north_east, .. } => {
                south_west.validate()?;
                north_east.validate()?;
                if !(south_west.lat < north_east.lat && south_west.lon < north_east.lon) {
                    return Err(GeoError::InvalidQuery(
                        "bbox south-west corner must be strictly south-west of north-east".into(),
                    ));
                }
            }
            RetrievalQuery::Route { origin, dest, corridor_m } => {
                origin.validate()?;
                dest.validate()?;
                if origin == dest {
                    return Err(GeoError::InvalidQuery("route endpoints must differ".into()));
                }
                if !(corridor_m.is_finite() && *corridor_m > 0.0) {
                    return Err(GeoError::InvalidQuery("corridor_m must be > 0".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Way {
    pub nodes: Vec<i64>,
    pub tags: BTreeMap<String, String>,
}

impl Way {
    pub fn tag(&self, k: &str) -> Option<&str> {
        self.tags.get(k).map(String::as_str)
    }

    pub fn highway(&self) -> Option<&str> {
        self.tag("highway")
    }

    pub fn is_roundabout(&self) -> bool {
        self.tag("junction") == Some("roundabout")
    }
}

/// In-memory OSM extract reduced to highway ways.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoGraph {
    pub nodes: BTreeMap<i64, GeoPoint>,
    pub ways: BTreeMap<i64, Way>,
    pub signals: BTreeSet<i64>,
}

impl GeoGraph {
    /// Drop nodes and signals not referenced by any way.
    pub fn prune_nodes(&mut self) {
        let used: BTreeSet<i64> = self.ways.values().flat_map(|w| w.nodes.iter().copied()).collect();
        self.nodes.retain(|id, _| used.contains(id));
        self.signals.retain(|id| used.contains(id));
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (id, w) in &self.ways {
            if w.nodes.len() < 2 {
                return Err(format!("way {id} has fewer than 2 nodes"));
            }
            if w.highway().is_none() {
                return Err(format!("way {id} lacks a highway tag"));
            }
            if let Some(n) = w.nodes.iter().find(|n| !self.nodes.contains_key(n)) {
                return Err(format!("way {id} references missing node {n}"));
            }
        }
        Ok(())
    }

    pub fn way_ids(&self) -> BTreeSet<i64> {
        self.ways.keys().copied().collect()
    }
}
