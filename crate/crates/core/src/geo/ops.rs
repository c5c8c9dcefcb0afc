use std::collections::BTreeSet;

use super::{haversine_m, GeoError, GeoGraph, GeoPoint, Result};

/// Keep ways with at least one node inside `predicate`, truncated one node beyond the
/// first and last inside node.
fn clip_by(g: &GeoGraph, inside: impl Fn(&GeoPoint) -> bool) -> Result<GeoGraph> {
    let mut out = GeoGraph { nodes: g.nodes.clone(), ways: Default::default(), signals: g.signals.clone() };
    for (id, w) in &g.ways {
        let flags: Vec<bool> = w.nodes.iter().map(|n| inside(&g.nodes[n])).collect();
        let (Some(first), Some(last)) = (flags.iter().position(|f| *f), flags.iter().rposition(|f| *f)) else {
            continue;
        };
        let lo = first.saturating_sub(1);
        let hi = (last + 1).min(w.nodes.len() - 1);
        let mut clipped = w.clone();
        clipped.nodes = w.nodes[lo..=hi].to_vec();
        if clipped.nodes.len() < 2 {
            continue;
        }
        out.ways.insert(*id, clipped);
    }
    if out.ways.is_empty() {
        return Err(GeoError::EmptyExtract);
    }
    out.prune_nodes();
    Ok(out)
}

/// Ways having a node within `radius_m` (great-circle) of `center`.
pub fn clip_radius(g: &GeoGraph, center: GeoPoint, radius_m: f64) -> Result<GeoGraph> {
    if !(radius_m.is_finite() && radius_m > 0.0) {
        return Err(GeoError::InvalidQuery("radius_m must be > 0".into()));
    }
    center.validate()?;
    clip_by(g, |p| haversine_m(center, *p) <= radius_m)
}

/// Ways having a node inside the bounding box.
pub fn clip_bbox(g: &GeoGraph, south_west: GeoPoint, north_east: GeoPoint) -> Result<GeoGraph> {
    clip_by(g, |p| {
        p.lat >= south_west.lat && p.lat <= north_east.lat && p.lon >= south_west.lon && p.lon <= north_east.lon
    })
}

/// Keep ways whose `highway` class is in `types`; the pseudo-class `roundabout` matches
/// `junction=roundabout`.
pub fn filter_road_types(g: &GeoGraph, types: &BTreeSet<String>) -> Result<GeoGraph> {
    if types.is_empty() {
        return Err(GeoError::InvalidQuery("road type set must be non-empty".into()));
    }
    let mut out = g.clone();
    out.ways.retain(|_, w| {
        w.highway().is_some_and(|h| types.contains(h)) || (w.is_roundabout() && types.contains("roundabout"))
    });
    if out.ways.is_empty() {
        return Err(GeoError::EmptyExtract);
    }
    out.prune_nodes();
    Ok(out)
}
