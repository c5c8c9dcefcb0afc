use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{GeoError, GeoGraph, GeoPoint, Result, Way};

/// Result of parsing an OSM document.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOsm {
    pub graph: GeoGraph,
    /// Way node references that pointed at nodes absent from the document.
    pub dangling_refs: usize,
}

enum Open {
    None,
    Node(i64),
    Way(i64, Way),
}

fn attr(e: &BytesStart, key: &[u8]) -> Result<Option<String>> {
    for a in e.attributes() {
        let a = a.map_err(|err| GeoError::MalformedXml(err.to_string()))?;
        if a.key.as_ref() == key {
            let v = a
                .unescape_value()
                .map_err(|err| GeoError::MalformedXml(err.to_string()))?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn req_attr<T: std::str::FromStr>(e: &BytesStart, key: &[u8]) -> Result<T> {
    let raw = attr(e, key)?.ok_or_else(|| {
        GeoError::MalformedXml(format!(
            "<{}> missing attribute {}",
            String::from_utf8_lossy(e.name().as_ref()),
            String::from_utf8_lossy(key)
        ))
    })?;
    raw.parse().map_err(|_| {
        GeoError::MalformedXml(format!("bad value {raw:?} for {}", String::from_utf8_lossy(key)))
    })
}

/// Parse OSM XML v0.6, keeping only ways that carry a `highway` tag.
pub fn parse_osm(xml: &[u8]) -> Result<ParsedOsm> {
    let mut reader = Reader::from_reader(xml);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();

    let mut nodes: BTreeMap<i64, GeoPoint> = BTreeMap::new();
    let mut signal_nodes: BTreeSet<i64> = BTreeSet::new();
    let mut ways: BTreeMap<i64, Way> = BTreeMap::new();
    let mut open = Open::None;
    let mut saw_root = false;
    let mut depth = 0usize;

    loop {
        let ev = reader
            .read_event_into(&mut buf)
            .map_err(|e| GeoError::MalformedXml(format!("at byte {}: {e}", reader.buffer_position())))?;
        match ev {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(ev, Event::Empty(_));
                match e.name().as_ref() {
                    b"osm" => saw_root = true,
                    b"node" => {
                        let id: i64 = req_attr(e, b"id")?;
                        let lat: f64 = req_attr(e, b"lat")?;
                        let lon: f64 = req_attr(e, b"lon")?;
                        let p = GeoPoint { lat, lon };
                        p.validate().map_err(|err| GeoError::MalformedXml(format!("node {id}: {err}")))?;
                        nodes.insert(id, p);
                        if !is_empty {
                            open = Open::Node(id);
                        }
                    }
                    b"way" => {
                        let id: i64 = req_attr(e, b"id")?;
                        if is_empty {
                            ways.insert(id, Way::default());
                        } else {
                            open = Open::Way(id, Way::default());
                        }
                    }
                    b"nd" => {
                        if let Open::Way(_, w) = &mut open {
                            w.nodes.push(req_attr(e, b"ref")?);
                        }
                    }
                    b"tag" => {
                        let k: String = req_attr(e, b"k")?;
                        let v: String = req_attr(e, b"v")?;
                        match &mut open {
                            Open::Node(id) => {
                                if k == "highway" && v == "traffic_signals" {
                                    signal_nodes.insert(*id);
                                }
                            }
                            Open::Way(_, w) => {
                                w.tags.insert(k, v);
                            }
                            Open::None => {}
                        }
                    }
                    _ => {}
                }
                if !is_empty {
                    depth += 1;
                }
            }
            Event::End(ref e) => {
                depth = depth.saturating_sub(1);
                match e.name().as_ref() {
                    b"way" => {
                        if let Open::Way(id, w) = std::mem::replace(&mut open, Open::None) {
                            ways.insert(id, w);
                        }
                    }
                    b"node" => open = Open::None,
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if !saw_root || depth != 0 {
        return Err(GeoError::MalformedXml("missing or unterminated <osm> root".into()));
    }

    ways.retain(|_, w| w.highway().is_some());
    let mut dangling = 0usize;
    for (id, w) in ways.iter_mut() {
        let before = w.nodes.len();
        w.nodes.retain(|n| nodes.contains_key(n));
        let dropped = before - w.nodes.len();
        if dropped > 0 {
            log::warn!("way {id}: dropped {dropped} reference(s) to missing nodes");
            dangling += dropped;
        }
    }
    ways.retain(|id, w| {
        let keep = w.nodes.len() >= 2;
        if !keep {
            log::warn!("way {id}: fewer than 2 resolvable nodes, discarded");
        }
        keep
    });
    if ways.is_empty() {
        return Err(GeoError::EmptyExtract);
    }
    let mut graph = GeoGraph { nodes, ways, signals: signal_nodes };
    graph.prune_nodes();
    Ok(ParsedOsm { graph, dangling_refs: dangling })
}

/// Canonical OSM XML: nodes then ways ordered by id, tags ordered by key, shortest
/// round-trip float formatting.
pub fn serialize_osm(g: &GeoGraph) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<osm version=\"0.6\" generator=\"scenforge\">\n");
    for (id, p) in &g.nodes {
        if g.signals.contains(id) {
            let _ = writeln!(out, "  <node id=\"{id}\" lat=\"{}\" lon=\"{}\">", p.lat, p.lon);
            out.push_str("    <tag k=\"highway\" v=\"traffic_signals\"/>\n");
            out.push_str("  </node>\n");
        } else {
            let _ = writeln!(out, "  <node id=\"{id}\" lat=\"{}\" lon=\"{}\"/>", p.lat, p.lon);
        }
    }
    for (id, w) in &g.ways {
        let _ = writeln!(out, "  <way id=\"{id}\">");
        for n in &w.nodes {
            let _ = writeln!(out, "    <nd ref=\"{n}\"/>");
        }
        for (k, v) in &w.tags {
            let _ = writeln!(out, "    <tag k=\"{}\" v=\"{}\"/>", escape(k.as_str()), escape(v.as_str()));
        }
        out.push_str("  </way>\n");
    }
    out.push_str("</osm>\n");
    out
}
