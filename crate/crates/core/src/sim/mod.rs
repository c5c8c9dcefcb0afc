//! Deterministic 10 Hz microsimulation of vehicles, cyclists and pedestrians.

mod behavior;
mod net;
mod world;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversity::{AdversityError, AdversityLog, AdversitySpec, Cuboid, WeatherTag};
use crate::class::AgentClass;
use crate::demand::SpawnEvent;
use crate::map::RoadNetwork;

pub use behavior::{
    idm_acceleration, lane_change_decision, BehaviorModel, BehaviorParams, Idm, IdmParams, LaneChangeParams,
    LaneChangeSituation, LaneDecision, LaneOption, Neighbor, MAX_DECEL,
};
pub use world::{AgentSnapshot, EgoPolicy, World};

/// Simulation step, s.
pub const DT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no spawned vehicle has a route of at least {0} m")]
    NoEgoCandidate(f64),
    #[error("unknown edge {0}")]
    UnknownEdge(String),
    #[error(transparent)]
    Adversity(#[from] AdversityError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub horizon_s: f64,
    pub seed: u64,
    pub behavior: BehaviorParams,
    /// Shortest route that qualifies a vehicle as the ego.
    pub min_ego_route_m: f64,
    /// Concurrent dynamic adversities allowed at once.
    pub global_cap: usize,
    /// Distance scanned ahead for leaders, m.
    pub lookahead_m: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon_s: 60.0,
            seed: 0,
            behavior: BehaviorParams::default(),
            min_ego_route_m: 200.0,
            global_cap: 1,
            lookahead_m: 200.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon_s >= 10.0) {
            return Err(SimError::Domain(format!("horizon {} s is shorter than 10 s", self.horizon_s)));
        }
        if !(self.min_ego_route_m >= 0.0) || !(self.lookahead_m > 0.0) {
            return Err(SimError::Domain("ego route length and lookahead must be positive".into()));
        }
        self.behavior.validate()
    }
}

/// One agent at one instant, as written to the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub id: u32,
    pub class: AgentClass,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub is_ego: bool,
}

/// Samples ordered by time, then agent id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub ego_id: Option<u32>,
    pub samples: Vec<TrajectorySample>,
}

impl TrajectorySet {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn tracks(&self) -> BTreeMap<u32, Vec<&TrajectorySample>> {
        let mut m: BTreeMap<u32, Vec<&TrajectorySample>> = BTreeMap::new();
        for s in &self.samples {
            m.entry(s.id).or_default().push(s);
        }
        m
    }

    pub fn ego_track(&self) -> Vec<&TrajectorySample> {
        self.samples.iter().filter(|s| s.is_ego).collect()
    }

    pub fn at_step(&self, k: u64) -> impl Iterator<Item = &TrajectorySample> {
        let t = step_time(k);
        self.samples.iter().filter(move |s| s.t == t)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut set = TrajectorySet::default();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: TrajectorySample = serde_json::from_str(&line)?;
            if s.is_ego {
                set.ego_id = Some(s.id);
            }
            set.samples.push(s);
        }
        Ok(set)
    }
}

/// Time of step `k`, computed from the integer step count so it prints exactly.
pub fn step_time(k: u64) -> f64 {
    k as f64 / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionRecord {
    pub t: f64,
    pub a: u32,
    pub b: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideInterval {
    pub agent: u32,
    pub spec_id: String,
    pub behavior: String,
    pub start_t: f64,
    pub end_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimStats {
    pub steps: u64,
    pub spawned: usize,
    pub despawned: usize,
    pub active: usize,
    /// Spawn events still waiting for entry space at the end.
    pub pending_spawns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub trajectories: TrajectorySet,
    pub adversity_log: AdversityLog,
    pub collisions: Vec<CollisionRecord>,
    pub override_intervals: Vec<OverrideInterval>,
    pub cones: Vec<Cuboid>,
    pub weather: Vec<WeatherTag>,
    pub stats: SimStats,
}

/// Run a full episode with default behavior parameters.
pub fn simulate(
    n: &RoadNetwork,
    spawns: &[SpawnEvent],
    adversities: &[AdversitySpec],
    horizon_s: f64,
    seed: u64,
) -> Result<SimOutcome> {
    let cfg = SimConfig { horizon_s, seed, ..SimConfig::default() };
    simulate_with(n, spawns, adversities, &cfg)
}

pub fn simulate_with(
    n: &RoadNetwork,
    spawns: &[SpawnEvent],
    adversities: &[AdversitySpec],
    cfg: &SimConfig,
) -> Result<SimOutcome> {
    let mut w = World::new(n, spawns, adversities, cfg)?;
    while !w.finished() {
        w.step();
    }
    w.into_outcome()
}
