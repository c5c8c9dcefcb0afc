use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::class::AgentClass;

/// Bearing sector around the ego, 45 degrees wide each, measured counter-clockwise from
/// the ego's heading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    Front,
    FrontLeft,
    Left,
    RearLeft,
    Rear,
    RearRight,
    Right,
    FrontRight,
}

impl Sector {
    pub fn centre_deg(self) -> f64 {
        match self {
            Sector::Front => 0.0,
            Sector::FrontLeft => 45.0,
            Sector::Left => 90.0,
            Sector::RearLeft => 135.0,
            Sector::Rear => 180.0,
            Sector::RearRight => -135.0,
            Sector::Right => -90.0,
            Sector::FrontRight => -45.0,
        }
    }

    /// Boundary bearings belong to the sector further from zero.
    pub fn contains(self, bearing_rad: f64) -> bool {
        Sector::of_bearing(crate::geom::wrap_angle(bearing_rad)) == self
    }

    /// Sector holding a bearing measured counter-clockwise from ego forward.
    pub fn of_bearing(bearing_rad: f64) -> Sector {
        let deg = bearing_rad.to_degrees();
        let k = ((deg / 45.0).round() as i64).rem_euclid(8);
        [
            Sector::Front,
            Sector::FrontLeft,
            Sector::Left,
            Sector::RearLeft,
            Sector::Rear,
            Sector::RearRight,
            Sector::Right,
            Sector::FrontRight,
        ][k as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalColor {
    Green,
    Red,
}

/// Boolean condition over the world as seen from one candidate agent.
#[derive(Debug, Clone, PartialEq)]
pub enum TriggerExpr {
    Const(bool),
    And(Vec<TriggerExpr>),
    Or(Vec<TriggerExpr>),
    Not(Box<TriggerExpr>),
    DistToEgoLt(f64),
    TtcToEgoLt(f64),
    SimTimeIn(f64, f64),
    AgentOnEdge(Vec<String>),
    RelativeBearing(Sector),
    SignalState(String, SignalColor),
    AgentClassIs(AgentClass),
}

/// What a trigger may ask about the world.
pub trait WorldView {
    fn time(&self) -> f64;
    /// Centre-to-centre distance to the ego, `None` without an ego.
    fn dist_to_ego(&self, agent: u32) -> Option<f64>;
    /// Time to collision along the ego's path, infinite when not closing.
    fn ttc_to_ego(&self, agent: u32) -> f64;
    fn agent_edge(&self, agent: u32) -> Option<String>;
    /// Bearing of the agent as seen from the ego, radians counter-clockwise from its heading.
    fn bearing_from_ego(&self, agent: u32) -> Option<f64>;
    /// Signal colour the agent faces at `node`, if it is approaching that node.
    fn signal_color(&self, node: &str, agent: u32) -> Option<SignalColor>;
    fn agent_class(&self, agent: u32) -> Option<AgentClass>;
}

pub fn evaluate_trigger(expr: &TriggerExpr, w: &dyn WorldView, agent: u32) -> bool {
    match expr {
        TriggerExpr::Const(b) => *b,
        TriggerExpr::And(v) => v.iter().all(|e| evaluate_trigger(e, w, agent)),
        TriggerExpr::Or(v) => v.iter().any(|e| evaluate_trigger(e, w, agent)),
        TriggerExpr::Not(e) => !evaluate_trigger(e, w, agent),
        TriggerExpr::DistToEgoLt(d) => w.dist_to_ego(agent).is_some_and(|x| x < *d),
        TriggerExpr::TtcToEgoLt(t) => w.ttc_to_ego(agent) < *t,
        TriggerExpr::SimTimeIn(a, b) => {
            let t = w.time();
            t >= *a && t <= *b
        }
        TriggerExpr::AgentOnEdge(edges) => w.agent_edge(agent).is_some_and(|e| edges.contains(&e)),
        TriggerExpr::RelativeBearing(s) => w.bearing_from_ego(agent).is_some_and(|b| s.contains(b)),
        TriggerExpr::SignalState(node, c) => w.signal_color(node, agent) == Some(*c),
        TriggerExpr::AgentClassIs(c) => w.agent_class(agent) == Some(*c),
    }
}

impl TriggerExpr {
    /// Edge and node ids the expression mentions.
    pub fn references(&self) -> (Vec<String>, Vec<String>) {
        let mut edges = Vec::new();
        let mut nodes = Vec::new();
        fn walk(e: &TriggerExpr, edges: &mut Vec<String>, nodes: &mut Vec<String>) {
            match e {
                TriggerExpr::And(v) | TriggerExpr::Or(v) => v.iter().for_each(|x| walk(x, edges, nodes)),
                TriggerExpr::Not(x) => walk(x, edges, nodes),
                TriggerExpr::AgentOnEdge(v) => edges.extend(v.iter().cloned()),
                TriggerExpr::SignalState(n, _) => nodes.push(n.clone()),
                _ => {}
            }
        }
        walk(self, &mut edges, &mut nodes);
        (edges, nodes)
    }

    pub fn to_value(&self) -> Value {
        let node = |op: &str, args: Value| json!({ "op": op, "args": args });
        match self {
            TriggerExpr::Const(true) => node("true", json!([])),
            TriggerExpr::Const(false) => node("false", json!([])),
            TriggerExpr::And(v) => node("and", Value::Array(v.iter().map(|e| e.to_value()).collect())),
            TriggerExpr::Or(v) => node("or", Value::Array(v.iter().map(|e| e.to_value()).collect())),
            TriggerExpr::Not(e) => node("not", json!([e.to_value()])),
            TriggerExpr::DistToEgoLt(d) => node("dist_to_ego_lt", json!([d])),
            TriggerExpr::TtcToEgoLt(t) => node("ttc_to_ego_lt", json!([t])),
            TriggerExpr::SimTimeIn(a, b) => node("sim_time_in", json!([a, b])),
            TriggerExpr::AgentOnEdge(v) => node("agent_on_edge", json!(v)),
            TriggerExpr::RelativeBearing(s) => node("relative_bearing", json!([s])),
            TriggerExpr::SignalState(n, c) => node("signal_state", json!([n, c])),
            TriggerExpr::AgentClassIs(c) => node("agent_class", json!([c])),
        }
    }

    pub fn from_value(v: &Value) -> Result<Self, String> {
        let op = v.get("op").and_then(Value::as_str).ok_or("trigger node needs a string \"op\"")?;
        let empty = Vec::new();
        let args = match v.get("args") {
            None => &empty,
            Some(a) => a.as_array().ok_or_else(|| format!("{op}: \"args\" must be an array"))?,
        };
        let num = |i: usize| -> Result<f64, String> {
            args.get(i).and_then(Value::as_f64).ok_or_else(|| format!("{op}: argument {i} must be a number"))
        };
        let text = |i: usize| -> Result<String, String> {
            args.get(i)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| format!("{op}: argument {i} must be a string"))
        };
        let children = || args.iter().map(TriggerExpr::from_value).collect::<Result<Vec<_>, _>>();
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(format!("{op}: expected {n} arguments, got {}", args.len()))
            }
        };
        Ok(match op {
            "true" => TriggerExpr::Const(true),
            "false" => TriggerExpr::Const(false),
            "and" => TriggerExpr::And(children()?),
            "or" => TriggerExpr::Or(children()?),
            "not" => {
                arity(1)?;
                TriggerExpr::Not(Box::new(TriggerExpr::from_value(&args[0])?))
            }
            "dist_to_ego_lt" => {
                arity(1)?;
                TriggerExpr::DistToEgoLt(num(0)?)
            }
            "ttc_to_ego_lt" => {
                arity(1)?;
                TriggerExpr::TtcToEgoLt(num(0)?)
            }
            "sim_time_in" => {
                arity(2)?;
                TriggerExpr::SimTimeIn(num(0)?, num(1)?)
            }
            "agent_on_edge" => {
                if args.is_empty() {
                    return Err("agent_on_edge needs at least one edge".into());
                }
                TriggerExpr::AgentOnEdge((0..args.len()).map(text).collect::<Result<_, _>>()?)
            }
            "relative_bearing" => {
                arity(1)?;
                TriggerExpr::RelativeBearing(serde_json::from_value(args[0].clone()).map_err(|e| e.to_string())?)
            }
            "signal_state" => {
                arity(2)?;
                TriggerExpr::SignalState(
                    text(0)?,
                    serde_json::from_value(args[1].clone()).map_err(|e| e.to_string())?,
                )
            }
            "agent_class" => {
                arity(1)?;
                TriggerExpr::AgentClassIs(serde_json::from_value(args[0].clone()).map_err(|e| e.to_string())?)
            }
            other => return Err(format!("unknown trigger op {other:?}")),
        })
    }
}

impl Serialize for TriggerExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TriggerExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        TriggerExpr::from_value(&v).map_err(D::Error::custom)
    }
}
