use std::fmt::Write as _;

use quick_xml::escape::escape;

use super::{NodeKind, RoadNetwork};
use crate::class::AgentClass;

/// SUMO plain-XML node and edge documents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SumoPlain {
    pub nodes_xml: String,
    pub edges_xml: String,
}

fn f2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Emit `.nod.xml` and `.edg.xml` with elements sorted by id and 2-decimal numbers.
pub fn export_sumo_plain(n: &RoadNetwork) -> SumoPlain {
    let mut nodes_xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<nodes>\n");
    let mut nodes: Vec<_> = n.nodes.iter().collect();
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    for node in nodes {
        let kind = match node.kind {
            NodeKind::Priority => "priority",
            NodeKind::TrafficLight => "traffic_light",
            NodeKind::DeadEnd => "dead_end",
        };
        let _ = writeln!(
            nodes_xml,
            "    <node id=\"{}\" x=\"{}\" y=\"{}\" type=\"{kind}\"/>",
            escape(node.id.as_str()),
            f2(node.xy.x),
            f2(node.xy.y)
        );
    }
    nodes_xml.push_str("</nodes>\n");

    let lanes = n.lane_index();
    let mut edges_xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<edges>\n");
    let mut edges: Vec<_> = n.edges.iter().collect();
    edges.sort_by(|a, b| a.id.cmp(&b.id));
    for e in edges {
        let allow: Vec<&str> = {
            let mut classes: Vec<AgentClass> = e
                .lanes
                .iter()
                .filter_map(|l| lanes.get(l.as_str()))
                .flat_map(|l| l.allowed.iter().copied())
                .collect();
            classes.sort();
            classes.dedup();
            classes
                .into_iter()
                .map(|c| match c {
                    AgentClass::Vehicle => "passenger",
                    AgentClass::Pedestrian => "pedestrian",
                    AgentClass::Cyclist => "bicycle",
                })
                .collect()
        };
        let width = e.lanes.first().and_then(|l| lanes.get(l.as_str())).map(|l| l.width).unwrap_or(3.5);
        let shape: Vec<String> = e.geometry.iter().map(|p| format!("{},{}", f2(p.x), f2(p.y))).collect();
        let _ = writeln!(
            edges_xml,
            "    <edge id=\"{}\" from=\"{}\" to=\"{}\" priority=\"{}\" numLanes=\"{}\" speed=\"{}\" width=\"{}\" allow=\"{}\" shape=\"{}\"/>",
            escape(e.id.as_str()),
            escape(e.from.as_str()),
            escape(e.to.as_str()),
            e.priority,
            e.lanes.len(),
            f2(e.speed_limit),
            f2(width),
            allow.join(" "),
            shape.join(" ")
        );
    }
    edges_xml.push_str("</edges>\n");
    SumoPlain { nodes_xml, edges_xml }
}
