use serde::{Deserialize, Serialize};

use super::{AdversityError, BehaviorKind, Result, WeatherTag};
use crate::geom::{Polyline, Vec2};
use crate::map::RoadNetwork;

pub const CONE_SPACING_M: f64 = 4.0;
/// Cone cuboid (length, width, height), m.
pub const CONE_DIMS: (f64, f64, f64) = (0.4, 0.4, 0.7);

/// Static box in the scene, centred at `xy` on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

/// Lanes closed over a station interval of their own centrelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Closure {
    pub edge: String,
    pub lanes: Vec<String>,
    pub start_m: f64,
    pub end_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StaticEffect {
    Construction { closure: Closure, cones: Vec<Cuboid> },
    Weather { tag: WeatherTag },
}

/// Resolve a static adversity against the network. The network itself is not modified;
/// closures are enforced by the simulator and cones rendered as cuboids.
pub fn apply_static(n: &RoadNetwork, kind: &BehaviorKind) -> Result<StaticEffect> {
    match kind {
        BehaviorKind::Weather { tag } => Ok(StaticEffect::Weather { tag: *tag }),
        BehaviorKind::ConstructionZone { edge, lanes, extent_m, start_m } => {
            let e = n.edge(edge).ok_or_else(|| AdversityError::UnknownEdge(edge.clone()))?;
            let edge_lanes = n.edge_lanes(e);
            let invalid = |reason: String| AdversityError::InvalidSpec { id: edge.clone(), reason };
            if let Some(&bad) = lanes.iter().find(|&&i| i >= edge_lanes.len()) {
                return Err(invalid(format!("edge has no lane {bad}")));
            }
            if lanes.len() >= edge_lanes.len() {
                return Err(invalid("construction_zone must leave a lane open".into()));
            }
            let lane_len = edge_lanes.iter().map(|l| l.length()).fold(f64::INFINITY, f64::min);
            if *extent_m > lane_len {
                return Err(invalid(format!("extent {extent_m} m exceeds lane length {lane_len:.1} m")));
            }
            let start = start_m.unwrap_or((lane_len - extent_m) / 2.0).clamp(0.0, lane_len - extent_m);
            let end = start + extent_m;
            let count = (extent_m / CONE_SPACING_M + 1e-9).floor() as usize + 1;
            let mut cones = Vec::new();
            for &i in lanes {
                let line = Polyline::new(edge_lanes[i].centerline.clone());
                for j in [i.wrapping_sub(1), i + 1] {
                    let Some(open) = edge_lanes.get(j).filter(|_| !lanes.contains(&j)) else { continue };
                    let other = Polyline::new(open.centerline.clone());
                    for k in 0..count {
                        let s = (start + k as f64 * CONE_SPACING_M).min(end);
                        let (p, h) = line.pose_at(s);
                        let (q, _) = other.pose_at(s * other.length() / line.length());
                        let toward = q.sub(p).normalized();
                        let c: Vec2 = p.add(toward.scale(edge_lanes[i].width / 2.0));
                        cones.push(Cuboid {
                            x: c.x,
                            y: c.y,
                            heading: h,
                            length: CONE_DIMS.0,
                            width: CONE_DIMS.1,
                            height: CONE_DIMS.2,
                        });
                    }
                }
            }
            Ok(StaticEffect::Construction {
                closure: Closure {
                    edge: edge.clone(),
                    lanes: lanes.iter().map(|&i| edge_lanes[i].id.clone()).collect(),
                    start_m: start,
                    end_m: end,
                },
                cones,
            })
        }
        other => Err(AdversityError::InvalidSpec {
            id: other.name().to_string(),
            reason: "not a static adversity".into(),
        }),
    }
}
