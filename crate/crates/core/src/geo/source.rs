use std::path::PathBuf;
use std::time::Duration;

use super::{
    clip_bbox, clip_radius, filter_road_types, parse_osm, shortest_route, GeoError, GeoGraph, RetrievalQuery,
    Result, EARTH_RADIUS_M,
};

/// Where raw OSM XML comes from.
pub trait MapSource: Send + Sync {
    fn fetch(&self, query: &RetrievalQuery) -> Result<Vec<u8>>;
}

/// Reads a local extract; the query is applied after parsing.
#[derive(Debug, Clone)]
pub struct FileSource {
    pub path: PathBuf,
}

impl FileSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl MapSource for FileSource {
    fn fetch(&self, _query: &RetrievalQuery) -> Result<Vec<u8>> {
        Ok(std::fs::read(&self.path)?)
    }
}

/// Overpass-style HTTP endpoint.
#[derive(Debug, Clone)]
pub struct OverpassSource {
    pub url: String,
    pub timeout: Duration,
}

impl Default for OverpassSource {
    fn default() -> Self {
        Self { url: "https://overpass-api.de/api/interpreter".into(), timeout: Duration::from_secs(60) }
    }
}

impl OverpassSource {
    /// Overpass QL for the query; route mode fetches the bounding box of both endpoints
    /// padded by the corridor plus a fixed margin.
    pub fn query_text(query: &RetrievalQuery) -> String {
        let body = match query {
            RetrievalQuery::Radius { center, radius_m } => {
                format!("way[\"highway\"](around:{radius_m},{},{})", center.lat, center.lon)
            }
            RetrievalQuery::Region { south_west, north_east, .. } => format!(
                "way[\"highway\"]({},{},{},{})",
                south_west.lat, south_west.lon, north_east.lat, north_east.lon
            ),
            RetrievalQuery::Route { origin, dest, corridor_m } => {
                let pad_m = corridor_m + 500.0;
                let dlat = (pad_m / EARTH_RADIUS_M).to_degrees();
                let mid = (origin.lat + dest.lat) / 2.0;
                let dlon = dlat / mid.to_radians().cos().max(1e-6);
                format!(
                    "way[\"highway\"]({},{},{},{})",
                    origin.lat.min(dest.lat) - dlat,
                    origin.lon.min(dest.lon) - dlon,
                    origin.lat.max(dest.lat) + dlat,
                    origin.lon.max(dest.lon) + dlon
                )
            }
        };
        format!("[out:xml][timeout:60];({body};);(._;>;);out body;")
    }
}

impl MapSource for OverpassSource {
    fn fetch(&self, query: &RetrievalQuery) -> Result<Vec<u8>> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let resp = agent
            .post(&self.url)
            .send_form(&[("data", Self::query_text(query).as_str())])
            .map_err(|e| GeoError::Source(e.to_string()))?;
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut resp.into_reader(), &mut bytes)?;
        Ok(bytes)
    }
}

/// Fetch, parse and reduce according to the retrieval mode.
pub fn retrieve(source: &dyn MapSource, query: &RetrievalQuery) -> Result<GeoGraph> {
    query.validate()?;
    let raw = source.fetch(query)?;
    let parsed = parse_osm(&raw)?;
    if parsed.dangling_refs > 0 {
        log::warn!("{} dangling node reference(s) dropped", parsed.dangling_refs);
    }
    let g = parsed.graph;
    match query {
        RetrievalQuery::Radius { center, radius_m } => clip_radius(&g, *center, *radius_m),
        RetrievalQuery::Region { south_west, north_east, road_types } => {
            let clipped = clip_bbox(&g, *south_west, *north_east)?;
            if road_types.is_empty() {
                Ok(clipped)
            } else {
                filter_road_types(&clipped, road_types)
            }
        }
        RetrievalQuery::Route { origin, dest, corridor_m } => {
            Ok(shortest_route(&g, *origin, *dest, *corridor_m)?.graph)
        }
    }
}
