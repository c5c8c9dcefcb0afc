use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{MapError, Result};
use crate::geo::{GeoGraph, GeoPoint, Way, EARTH_RADIUS_M};
use crate::geom::Vec2;

/// Points farther than this from the origin are rejected by the tangent-plane projection.
pub const MAX_PROJECTION_SPAN_DEG: f64 = 0.5;

/// Equirectangular tangent-plane projection about `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    pub origin: GeoPoint,
}

impl LocalProjection {
    pub fn new(origin: GeoPoint) -> Result<Self> {
        origin.validate()?;
        Ok(Self { origin })
    }

    pub fn project(&self, p: GeoPoint) -> Vec2 {
        let coslat = self.origin.lat.to_radians().cos();
        Vec2::new(
            EARTH_RADIUS_M * (p.lon - self.origin.lon).to_radians() * coslat,
            EARTH_RADIUS_M * (p.lat - self.origin.lat).to_radians(),
        )
    }

    pub fn unproject(&self, v: Vec2) -> GeoPoint {
        let coslat = self.origin.lat.to_radians().cos();
        GeoPoint {
            lat: self.origin.lat + (v.y / EARTH_RADIUS_M).to_degrees(),
            lon: self.origin.lon + (v.x / (EARTH_RADIUS_M * coslat)).to_degrees(),
        }
    }

    fn check_span(&self, p: GeoPoint) -> Result<()> {
        if (p.lat - self.origin.lat).abs() > MAX_PROJECTION_SPAN_DEG
            || (p.lon - self.origin.lon).abs() > MAX_PROJECTION_SPAN_DEG
        {
            return Err(MapError::OutOfRange { lat: p.lat, lon: p.lon, limit: MAX_PROJECTION_SPAN_DEG });
        }
        Ok(())
    }
}

/// A GeoGraph whose nodes have been placed in the local metric frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGraph {
    pub projection: LocalProjection,
    pub nodes: BTreeMap<i64, Vec2>,
    pub ways: BTreeMap<i64, Way>,
    pub signals: BTreeSet<i64>,
}

pub fn to_local_frame(g: &GeoGraph, origin: GeoPoint) -> Result<ProjectedGraph> {
    let projection = LocalProjection::new(origin)?;
    let mut nodes = BTreeMap::new();
    for (id, p) in &g.nodes {
        projection.check_span(*p)?;
        nodes.insert(*id, projection.project(*p));
    }
    Ok(ProjectedGraph { projection, nodes, ways: g.ways.clone(), signals: g.signals.clone() })
}
