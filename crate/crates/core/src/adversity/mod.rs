//! Safety-critical event injection: trigger conditions, behavior overrides, static scene
//! edits and importance-sampling bookkeeping.

mod orchestrator;
mod statics;
mod trigger;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::class::AgentClass;
use crate::map::RoadNetwork;

pub use orchestrator::{CandidateAgent, Orchestrator};
pub use statics::{apply_static, Closure, Cuboid, StaticEffect, CONE_DIMS, CONE_SPACING_M};
pub use trigger::{evaluate_trigger, Sector, SignalColor, TriggerExpr, WorldView};

#[derive(Debug, Error)]
pub enum AdversityError {
    #[error("invalid adversity spec {id}: {reason}")]
    InvalidSpec { id: String, reason: String },
    #[error("{kind} cannot be applied to a {class}")]
    IncompatibleClass { kind: String, class: AgentClass },
    #[error("unknown edge {0}")]
    UnknownEdge(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AdversityError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversityKind {
    Dynamic,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherTag {
    Rain,
    Snow,
    Fog,
    Night,
}

impl WeatherTag {
    pub fn as_str(self) -> &'static str {
        match self {
            WeatherTag::Rain => "rain",
            WeatherTag::Snow => "snow",
            WeatherTag::Fog => "fog",
            WeatherTag::Night => "night",
        }
    }
}

fn default_yield_duration() -> f64 {
    8.0
}

fn default_hold() -> f64 {
    20.0
}

fn default_zigzag_duration() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorKind {
    /// Swerve into the ego's lane ahead of it once the gap to the ego is at most `target_gap_m`.
    CutIn { lateral_duration_s: f64, target_gap_m: f64 },
    HardBrake { decel: f64, duration_s: f64 },
    /// Enter junctions without yielding to conflicting traffic.
    FailToYield {
        #[serde(default = "default_yield_duration")]
        duration_s: f64,
    },
    /// Treat red as green and ignore conflicting traffic.
    RunRedLight {
        #[serde(default = "default_yield_duration")]
        duration_s: f64,
    },
    PedestrianDash { speed_multiplier: f64 },
    CyclistBlindSpot {
        #[serde(default = "default_hold")]
        max_hold_s: f64,
    },
    ZigzagDrift {
        amplitude_m: f64,
        period_s: f64,
        #[serde(default = "default_zigzag_duration")]
        duration_s: f64,
    },
    ConstructionZone {
        edge: String,
        /// Lane indices, 0 = outermost.
        lanes: Vec<usize>,
        extent_m: f64,
        /// Zone start along the edge; centred on the edge when absent.
        #[serde(default)]
        start_m: Option<f64>,
    },
    Weather { tag: WeatherTag },
}

impl BehaviorKind {
    pub fn name(&self) -> &'static str {
        match self {
            BehaviorKind::CutIn { .. } => "cut_in",
            BehaviorKind::HardBrake { .. } => "hard_brake",
            BehaviorKind::FailToYield { .. } => "fail_to_yield",
            BehaviorKind::RunRedLight { .. } => "run_red_light",
            BehaviorKind::PedestrianDash { .. } => "pedestrian_dash",
            BehaviorKind::CyclistBlindSpot { .. } => "cyclist_blind_spot",
            BehaviorKind::ZigzagDrift { .. } => "zigzag_drift",
            BehaviorKind::ConstructionZone { .. } => "construction_zone",
            BehaviorKind::Weather { .. } => "weather",
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, BehaviorKind::ConstructionZone { .. } | BehaviorKind::Weather { .. })
    }

    pub fn applies_to(&self, class: AgentClass) -> bool {
        use AgentClass::*;
        match self {
            BehaviorKind::CutIn { .. } | BehaviorKind::ZigzagDrift { .. } => class == Vehicle,
            BehaviorKind::HardBrake { .. } | BehaviorKind::FailToYield { .. } | BehaviorKind::RunRedLight { .. } => {
                class != Pedestrian
            }
            BehaviorKind::PedestrianDash { .. } => class == Pedestrian,
            BehaviorKind::CyclistBlindSpot { .. } => class == Cyclist,
            BehaviorKind::ConstructionZone { .. } | BehaviorKind::Weather { .. } => false,
        }
    }

    /// Longest time an override of this kind stays attached.
    pub fn max_duration_s(&self) -> f64 {
        match self {
            BehaviorKind::CutIn { lateral_duration_s, .. } => 10.0 + lateral_duration_s,
            BehaviorKind::HardBrake { duration_s, .. }
            | BehaviorKind::FailToYield { duration_s }
            | BehaviorKind::RunRedLight { duration_s }
            | BehaviorKind::ZigzagDrift { duration_s, .. } => *duration_s,
            BehaviorKind::PedestrianDash { .. } => 60.0,
            BehaviorKind::CyclistBlindSpot { max_hold_s } => max_hold_s + 15.0,
            BehaviorKind::ConstructionZone { .. } | BehaviorKind::Weather { .. } => f64::INFINITY,
        }
    }

    /// Placeholder per-decision-step natural probabilities.
    pub fn default_p_natural(&self) -> f64 {
        match self {
            BehaviorKind::RunRedLight { .. } | BehaviorKind::PedestrianDash { .. } => 1e-4,
            _ => 1e-3,
        }
    }

    fn check_ranges(&self) -> std::result::Result<(), String> {
        let within = |name: &str, v: f64, lo: f64, hi: f64| {
            if v >= lo && v <= hi {
                Ok(())
            } else {
                Err(format!("{name} = {v} outside [{lo}, {hi}]"))
            }
        };
        match self {
            BehaviorKind::CutIn { lateral_duration_s, target_gap_m } => {
                within("lateral_duration_s", *lateral_duration_s, 0.5, 5.0)?;
                within("target_gap_m", *target_gap_m, 1.0, 50.0)
            }
            BehaviorKind::HardBrake { decel, duration_s } => {
                within("decel", *decel, 3.0, 9.0)?;
                within("duration_s", *duration_s, 0.1, 10.0)
            }
            BehaviorKind::FailToYield { duration_s } | BehaviorKind::RunRedLight { duration_s } => {
                within("duration_s", *duration_s, 0.1, 30.0)
            }
            BehaviorKind::PedestrianDash { speed_multiplier } => within("speed_multiplier", *speed_multiplier, 1.0, 5.0),
            BehaviorKind::CyclistBlindSpot { max_hold_s } => within("max_hold_s", *max_hold_s, 0.1, 60.0),
            BehaviorKind::ZigzagDrift { amplitude_m, period_s, duration_s } => {
                within("amplitude_m", *amplitude_m, 0.05, 2.0)?;
                within("period_s", *period_s, 1.0, 20.0)?;
                within("duration_s", *duration_s, 0.1, 60.0)
            }
            BehaviorKind::ConstructionZone { lanes, extent_m, start_m, .. } => {
                if lanes.is_empty() {
                    return Err("construction_zone closes no lanes".into());
                }
                within("extent_m", *extent_m, 1.0, 500.0)?;
                if let Some(s) = start_m {
                    within("start_m", *s, 0.0, 10_000.0)?;
                }
                Ok(())
            }
            BehaviorKind::Weather { .. } => Ok(()),
        }
    }
}

fn default_trigger() -> TriggerExpr {
    TriggerExpr::Const(true)
}

fn default_max_concurrent() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversitySpec {
    pub id: String,
    pub kind: AdversityKind,
    #[serde(default = "default_trigger")]
    pub trigger: TriggerExpr,
    pub behavior: BehaviorKind,
    /// Natural activation probability per decision step.
    pub p_natural: f64,
    /// Boosted (sampling) probability per decision step.
    pub q_boosted: f64,
    #[serde(default)]
    pub cooldown_s: f64,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
}

impl AdversitySpec {
    /// Dynamic spec with the kind's placeholder natural probability and no boosting.
    pub fn natural(id: &str, trigger: TriggerExpr, behavior: BehaviorKind) -> Self {
        let p = behavior.default_p_natural();
        Self {
            id: id.to_string(),
            kind: if behavior.is_static() { AdversityKind::Static } else { AdversityKind::Dynamic },
            trigger,
            behavior,
            p_natural: p,
            q_boosted: p,
            cooldown_s: 0.0,
            max_concurrent: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| AdversityError::InvalidSpec { id: self.id.clone(), reason };
        if self.id.is_empty() {
            return Err(bad("empty id".into()));
        }
        let open = |p: f64| p > 0.0 && p < 1.0;
        if !open(self.p_natural) || !open(self.q_boosted) {
            return Err(bad(format!("probabilities {} / {} must lie in (0, 1)", self.p_natural, self.q_boosted)));
        }
        if self.q_boosted < self.p_natural {
            return Err(bad("q_boosted below p_natural".into()));
        }
        if !(self.cooldown_s >= 0.0) || self.max_concurrent < 1 {
            return Err(bad("cooldown must be >= 0 and max_concurrent >= 1".into()));
        }
        let should_be_static = self.behavior.is_static();
        if should_be_static != (self.kind == AdversityKind::Static) {
            return Err(bad(format!("{} does not match kind {:?}", self.behavior.name(), self.kind)));
        }
        self.behavior.check_ranges().map_err(bad)
    }

    /// Check that every edge and node the spec mentions exists in `n`.
    pub fn check_references(&self, n: &RoadNetwork) -> Result<()> {
        let (edges, nodes) = self.trigger.references();
        for e in edges {
            if n.edge(&e).is_none() {
                return Err(AdversityError::UnknownEdge(e));
            }
        }
        for v in nodes {
            if n.node(&v).is_none() {
                return Err(AdversityError::UnknownNode(v));
            }
        }
        if let BehaviorKind::ConstructionZone { edge, .. } = &self.behavior {
            if n.edge(edge).is_none() {
                return Err(AdversityError::UnknownEdge(edge.clone()));
            }
        }
        Ok(())
    }
}

pub fn parse_specs(json: &str) -> Result<Vec<AdversitySpec>> {
    let specs: Vec<AdversitySpec> = serde_json::from_str(json)?;
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

/// Importance-sampled activation draw.
///
/// Untriggered decisions carry no likelihood ratio. A triggered one activates when a
/// uniform draw falls below `q_boosted`; its factor converts the boosted branch
/// probability back to the natural one.
pub fn sample_activation<R: Rng + ?Sized>(spec: &AdversitySpec, triggered: bool, rng: &mut R) -> (bool, f64) {
    if !triggered {
        return (false, 1.0);
    }
    let u: f64 = rng.gen();
    activation_factor(spec, u < spec.q_boosted)
}

pub fn activation_factor(spec: &AdversitySpec, activated: bool) -> (bool, f64) {
    let (p, q) = (spec.p_natural, spec.q_boosted);
    if p == q {
        return (activated, 1.0);
    }
    if activated {
        (true, p / q)
    } else {
        (false, (1.0 - p) / (1.0 - q))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: f64,
    pub spec_id: String,
    pub agent: u32,
    pub activated: bool,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub t: f64,
    pub spec_id: String,
    pub agent: u32,
    pub behavior: String,
    /// When the override detached; `None` while still active.
    pub end_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticRecord {
    pub spec_id: String,
    pub behavior: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdversityLog {
    pub activations: Vec<Activation>,
    pub decisions: Vec<DecisionRecord>,
    pub static_applied: Vec<StaticRecord>,
    pub episode_weight: f64,
}

impl AdversityLog {
    pub fn refresh_weight(&mut self) {
        self.episode_weight = episode_weight(self);
    }

    pub fn activated_kinds(&self) -> Vec<String> {
        let mut k: Vec<String> = self.activations.iter().map(|a| a.behavior.clone()).collect();
        k.extend(self.static_applied.iter().map(|s| s.behavior.clone()));
        k.sort();
        k.dedup();
        k
    }
}

/// Product of all decision factors, accumulated in log space.
pub fn episode_weight(log: &AdversityLog) -> f64 {
    log.decisions.iter().map(|d| d.factor.ln()).sum::<f64>().exp()
}

/// A behavior attached to one agent for a bounded time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub agent: u32,
    pub spec_id: String,
    pub behavior: BehaviorKind,
    pub start_t: f64,
    /// Latest detach time; the simulator may end it earlier.
    pub end_t: f64,
}

pub fn apply_behavior(agent: u32, class: AgentClass, kind: &BehaviorKind, spec_id: &str, t: f64) -> Result<Override> {
    if !kind.applies_to(class) {
        return Err(AdversityError::IncompatibleClass { kind: kind.name().to_string(), class });
    }
    Ok(Override {
        agent,
        spec_id: spec_id.to_string(),
        behavior: kind.clone(),
        start_t: t,
        end_t: t + kind.max_duration_s(),
    })
}
