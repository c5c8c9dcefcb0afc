use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{DemandError, Result, SegmentSpeed};

/// Wire format of a speed feed, mirroring the common traffic-flow API shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedFeed {
    /// `"km/h"` (default) or `"m/s"`.
    #[serde(default = "default_units")]
    pub units: String,
    pub segments: Vec<SpeedFeedEntry>,
}

fn default_units() -> String {
    "km/h".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedFeedEntry {
    pub edge_id: String,
    #[serde(rename = "currentSpeed")]
    pub current_speed: f64,
    #[serde(rename = "freeFlowSpeed")]
    pub free_flow_speed: f64,
}

/// Convert a feed to m/s, clamping observed speeds above free flow.
pub fn parse_speed_feed(bytes: &[u8]) -> Result<Vec<SegmentSpeed>> {
    let feed: SpeedFeed = serde_json::from_slice(bytes)?;
    let scale = match feed.units.as_str() {
        "km/h" => 1.0 / 3.6,
        "m/s" => 1.0,
        other => return Err(DemandError::Source(format!("unknown speed units {other:?}"))),
    };
    let mut out = Vec::with_capacity(feed.segments.len());
    for s in feed.segments {
        let v_free = s.free_flow_speed * scale;
        let mut v_obs = s.current_speed * scale;
        if !(v_free > 0.0) || !(v_obs >= 0.0) {
            return Err(DemandError::Domain(format!("bad speeds for edge {}", s.edge_id)));
        }
        if v_obs > v_free {
            log::warn!("edge {}: observed speed {v_obs:.2} above free flow {v_free:.2}, clamped", s.edge_id);
            v_obs = v_free;
        }
        out.push(SegmentSpeed { edge_id: s.edge_id, v_obs, v_free });
    }
    Ok(out)
}

pub trait TrafficSpeedSource: Send + Sync {
    fn speeds(&self) -> Result<Vec<SegmentSpeed>>;
}

#[derive(Debug, Clone)]
pub struct JsonFileSpeedSource {
    pub path: PathBuf,
}

impl TrafficSpeedSource for JsonFileSpeedSource {
    fn speeds(&self) -> Result<Vec<SegmentSpeed>> {
        parse_speed_feed(&std::fs::read(&self.path)?)
    }
}

/// GETs a feed document from `url`, passing `key` as a query parameter when set.
#[derive(Debug, Clone)]
pub struct HttpSpeedSource {
    pub url: String,
    pub key: Option<String>,
    pub timeout: Duration,
}

impl TrafficSpeedSource for HttpSpeedSource {
    fn speeds(&self) -> Result<Vec<SegmentSpeed>> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut req = agent.get(&self.url);
        if let Some(k) = &self.key {
            req = req.query("key", k);
        }
        let resp = req.call().map_err(|e| DemandError::Source(e.to_string()))?;
        let mut body = Vec::new();
        std::io::Read::read_to_end(&mut resp.into_reader(), &mut body)?;
        parse_speed_feed(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feed_converts_and_clamps() {
        let doc = br#"{"segments":[{"edge_id":"a","currentSpeed":36,"freeFlowSpeed":72},
                                   {"edge_id":"b","currentSpeed":80,"freeFlowSpeed":72}]}"#;
        let s = parse_speed_feed(doc).unwrap();
        assert!((s[0].v_obs - 10.0).abs() < 1e-12 && (s[0].v_free - 20.0).abs() < 1e-12);
        assert_eq!(s[1].v_obs, s[1].v_free);
    }

    #[test]
    fn feed_rejects_unknown_units() {
        let doc = br#"{"units":"mph","segments":[]}"#;
        assert!(parse_speed_feed(doc).is_err());
    }
}
