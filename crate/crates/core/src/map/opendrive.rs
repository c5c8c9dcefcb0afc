use std::fmt::Write as _;

use quick_xml::escape::escape;

use super::build::{edge_category, WayCategory};
use super::{DrivingSide, RoadNetwork};

/// OpenDRIVE 1.6 subset: one road per edge, piecewise-linear plan view, a single lane
/// section holding that edge's lanes on the driving side.
pub fn export_opendrive(n: &RoadNetwork) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<OpenDRIVE>\n");
    let (mut west, mut south, mut east, mut north) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for node in &n.nodes {
        west = west.min(node.xy.x);
        east = east.max(node.xy.x);
        south = south.min(node.xy.y);
        north = north.max(node.xy.y);
    }
    let _ = writeln!(
        out,
        "  <header revMajor=\"1\" revMinor=\"6\" name=\"scenforge\" version=\"1.0\" north=\"{north}\" south=\"{south}\" east=\"{east}\" west=\"{west}\">"
    );
    let _ = writeln!(
        out,
        "    <geoReference><![CDATA[+proj=eqc +lat_ts={lat} +lat_0={lat} +lon_0={lon} +R=6371000 +units=m +no_defs]]></geoReference>",
        lat = n.origin.lat,
        lon = n.origin.lon
    );
    out.push_str("  </header>\n");

    let lanes = n.lane_index();
    let mut edges: Vec<_> = n.edges.iter().collect();
    edges.sort_by(|a, b| a.id.cmp(&b.id));
    for e in edges {
        let length = e.length();
        let _ = writeln!(
            out,
            "  <road name=\"{}\" length=\"{length}\" id=\"{}\" junction=\"-1\">",
            escape(e.highway.as_str()),
            escape(e.id.as_str())
        );
        out.push_str("    <planView>\n");
        let mut s = 0.0;
        for w in e.geometry.windows(2) {
            let seg = w[1].sub(w[0]);
            let len = seg.norm();
            let _ = writeln!(
                out,
                "      <geometry s=\"{s}\" x=\"{}\" y=\"{}\" hdg=\"{}\" length=\"{len}\">",
                w[0].x,
                w[0].y,
                seg.heading()
            );
            out.push_str("        <line/>\n      </geometry>\n");
            s += len;
        }
        out.push_str("    </planView>\n");

        let lane_list: Vec<_> = e.lanes.iter().filter_map(|l| lanes.get(l.as_str()).copied()).collect();
        let count = lane_list.len();
        let width = lane_list.first().map(|l| l.width).unwrap_or(3.5);
        let one_way = e.reverse_of.is_none();
        let inner_shift = if one_way { count as f64 * width / 2.0 } else { 0.0 };
        let (offset, side_tag, sign) = match n.driving_side {
            DrivingSide::Right => (inner_shift, "right", -1i64),
            DrivingSide::Left => (-inner_shift, "left", 1i64),
        };
        let lane_type = match edge_category(e) {
            WayCategory::Pedestrian => "sidewalk",
            WayCategory::Cycle => "biking",
            _ => "driving",
        };
        out.push_str("    <lanes>\n");
        let _ = writeln!(out, "      <laneOffset s=\"0\" a=\"{offset}\" b=\"0\" c=\"0\" d=\"0\"/>");
        out.push_str("      <laneSection s=\"0\">\n");
        out.push_str("        <center>\n          <lane id=\"0\" type=\"none\" level=\"false\"/>\n        </center>\n");
        let _ = writeln!(out, "        <{side_tag}>");
        // Lane index 0 is the outermost lane, i.e. the largest |id|.
        for (k, lane) in lane_list.iter().enumerate().rev() {
            let id = sign * (count - k) as i64;
            let _ = writeln!(
                out,
                "          <lane id=\"{id}\" type=\"{lane_type}\" level=\"false\">\n            <userData code=\"laneId\" value=\"{}\"/>\n            <width sOffset=\"0\" a=\"{}\" b=\"0\" c=\"0\" d=\"0\"/>\n          </lane>",
                escape(lane.id.as_str()),
                lane.width
            );
        }
        let _ = writeln!(out, "        </{side_tag}>");
        out.push_str("      </laneSection>\n    </lanes>\n  </road>\n");
    }
    out.push_str("</OpenDRIVE>\n");
    out
}
