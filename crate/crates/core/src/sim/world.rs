//! World state and the fixed-step update loop.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::behavior::{lane_change_decision, BehaviorModel, Idm, IdmParams, LaneChangeSituation, LaneDecision, LaneOption, Neighbor, MAX_DECEL};
use super::net::{SegKind, SimNet};
use super::{
    step_time, CollisionRecord, OverrideInterval, Result, SimConfig, SimError, SimOutcome, SimStats, TrajectorySample,
    TrajectorySet, DT,
};
use crate::adversity::{
    apply_static, AdversitySpec, BehaviorKind, CandidateAgent, Cuboid, Orchestrator, Override, SignalColor,
    StaticEffect, WeatherTag, WorldView,
};
use crate::class::AgentClass;
use crate::demand::SpawnEvent;
use crate::geom::{quads_overlap, rect_corners, wrap_angle, Polyline, Vec2};
use crate::map::{RoadNetwork, SignalProgram};

/// Claims are released once the rear is this far into the target lane.
const RELEASE_CLEARANCE_M: f64 = 1.0;
/// Higher-priority traffic closer than this (in time) blocks a claim.
const YIELD_ETA_S: f64 = 3.5;
/// No discretionary lane changes this close to a lane end.
const LANE_CHANGE_END_MARGIN_M: f64 = 20.0;
/// Pedestrians count as on a lane within this margin beyond its half-width.
const CORRIDOR_MARGIN_M: f64 = 0.5;
/// Vehicles on a diverging connector stay relevant until their rear is this far in.
const DIVERGE_WATCH_M: f64 = 10.0;
/// A lane closure forces a merge from this distance.
const CLOSURE_MERGE_M: f64 = 150.0;
const PED_SAMPLE_M: f64 = 0.5;
/// Vehicles already downstream are credited with this much further travel.
const ROOM_LOOKAHEAD_S: f64 = 2.0;
/// Entering a higher-priority road needs room for this many vehicles downstream.
const KEEP_CLEAR_VEHICLES: f64 = 2.0;

/// Replaces the NDE acceleration of the ego vehicle.
pub trait EgoPolicy: Send {
    fn acceleration(&self, ego: &AgentSnapshot, nde_accel: f64) -> f64;
}

/// Public read-only view of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSnapshot {
    pub id: u32,
    pub class: AgentClass,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub accel: f64,
    pub length: f64,
    pub width: f64,
    pub is_ego: bool,
    /// Edge of the current lane, or of the lane a connector leaves from.
    pub edge: Option<String>,
    pub lane: Option<String>,
    /// Front station on the current lane or connector.
    pub s: f64,
    pub on_connector: bool,
}

#[derive(Debug, Clone)]
struct Crossing {
    s0: f64,
    s1: f64,
    /// (segment, station on it) for every vehicle segment crossed.
    segs: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
struct WalkPath {
    line: Polyline,
    crossings: Vec<Crossing>,
}

#[derive(Debug, Clone)]
struct Walk {
    path: usize,
    s: f64,
    next_crossing: usize,
    crossing: bool,
    dash: Option<Polyline>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum OverrideState {
    None,
    Done,
    Released,
}

#[derive(Debug, Clone)]
struct Agent {
    id: u32,
    class: AgentClass,
    length: f64,
    width: f64,
    height: f64,
    is_ego: bool,
    speed_factor: f64,
    v: f64,
    a: f64,
    seg: usize,
    s: f64,
    route: Vec<usize>,
    route_idx: usize,
    claims: Vec<usize>,
    request_since: Option<f64>,
    blend_from: f64,
    blend_start: f64,
    blend_len: f64,
    last_change: f64,
    walk: Option<Walk>,
    ovr_state: OverrideState,
}

impl Agent {
    fn is_rider(&self) -> bool {
        self.walk.is_none()
    }
}

#[derive(Debug, Clone, Copy)]
struct Pose {
    p: Vec2,
    h: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Flags {
    ignore_signal: bool,
    ignore_conflicts: bool,
    hard_brake: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Leader {
    gap: f64,
    v: f64,
}

struct PathItem {
    seg: usize,
    offset: f64,
}

/// A running episode. Step it with [`World::step`] until [`World::finished`].
pub struct World {
    net: SimNet,
    signals: Vec<SignalProgram>,
    cfg: SimConfig,
    model: Box<dyn BehaviorModel>,
    ego_policy: Option<Box<dyn EgoPolicy>>,
    rng: ChaCha8Rng,
    k: u64,
    total_steps: u64,
    end_step: Option<u64>,
    events: Vec<SpawnEvent>,
    next_event: usize,
    waiting: Vec<(SpawnEvent, Vec<usize>)>,
    agents: BTreeMap<u32, Agent>,
    next_id: u32,
    ego: Option<u32>,
    orch: Option<Orchestrator>,
    /// lane segment -> closed station interval
    closures: BTreeMap<usize, (f64, f64)>,
    cones: Vec<Cuboid>,
    weather: Vec<WeatherTag>,
    walk_paths: Vec<WalkPath>,
    walk_lookup: BTreeMap<Vec<usize>, usize>,
    seg_boxes: Vec<(Vec2, Vec2)>,
    occupancy: Vec<Vec<(f64, u32)>>,
    ped_occupancy: BTreeMap<usize, Vec<(f64, u32)>>,
    poses: BTreeMap<u32, Pose>,
    samples: Vec<TrajectorySample>,
    collisions: Vec<CollisionRecord>,
    collided: BTreeSet<(u32, u32)>,
    open_intervals: BTreeMap<u32, OverrideInterval>,
    intervals: Vec<OverrideInterval>,
    spawned: usize,
    despawned: usize,
    recorded_step: Option<u64>,
}

fn edge_route(net: &SimNet, route: &[String]) -> Result<Vec<usize>> {
    let ids: Vec<usize> = route
        .iter()
        .map(|e| net.edge_lookup.get(e).copied().ok_or_else(|| SimError::UnknownEdge(e.clone())))
        .collect::<Result<_>>()?;
    if ids.is_empty() {
        return Err(SimError::Domain("empty route".into()));
    }
    for w in ids.windows(2) {
        if net.edge_to_node[w[0]] != net.edge_from_node[w[1]] {
            return Err(SimError::Domain(format!(
                "route step {} -> {} is not connected",
                net.edge_ids[w[0]], net.edge_ids[w[1]]
            )));
        }
    }
    Ok(ids)
}

impl World {
    pub fn new(n: &RoadNetwork, spawns: &[SpawnEvent], adversities: &[AdversitySpec], cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let net = SimNet::new(n);
        for s in adversities {
            s.validate()?;
            s.check_references(n)?;
        }
        let mut closures = BTreeMap::new();
        let mut cones = Vec::new();
        let mut weather = Vec::new();
        let lane_lookup: BTreeMap<&str, usize> =
            net.lane_ids.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut statics: Vec<&AdversitySpec> = adversities.iter().filter(|s| s.behavior.is_static()).collect();
        statics.sort_by(|a, b| a.id.cmp(&b.id));
        for s in statics {
            match apply_static(n, &s.behavior)? {
                StaticEffect::Construction { closure, cones: c } => {
                    for l in &closure.lanes {
                        closures.insert(lane_lookup[l.as_str()], (closure.start_m, closure.end_m));
                    }
                    cones.extend(c);
                }
                StaticEffect::Weather { tag } => {
                    if !weather.contains(&tag) {
                        weather.push(tag);
                    }
                }
            }
        }
        let mut events = spawns.to_vec();
        events.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.route_id.cmp(&b.route_id)));
        for e in &events {
            edge_route(&net, &e.route)?;
        }
        let seg_boxes = net
            .segs
            .iter()
            .map(|s| {
                let pad = s.width / 2.0 + CORRIDOR_MARGIN_M;
                let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
                for p in s.line.points() {
                    lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                    hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
                }
                (lo.sub(Vec2::new(pad, pad)), hi.add(Vec2::new(pad, pad)))
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0);
        let orch = Orchestrator::new(adversities.to_vec(), cfg.global_cap, cfg.seed)?;
        let total_steps = (cfg.horizon_s / DT).round() as u64;
        let seg_count = net.segs.len();
        Ok(Self {
            signals: n.signals.iter().map(|s| s.program.clone()).collect(),
            net,
            cfg: cfg.clone(),
            model: Box::new(Idm),
            ego_policy: None,
            rng,
            k: 0,
            total_steps,
            end_step: None,
            events,
            next_event: 0,
            waiting: Vec::new(),
            agents: BTreeMap::new(),
            next_id: 0,
            ego: None,
            orch: Some(orch),
            closures,
            cones,
            weather,
            walk_paths: Vec::new(),
            walk_lookup: BTreeMap::new(),
            seg_boxes,
            occupancy: vec![Vec::new(); seg_count],
            ped_occupancy: BTreeMap::new(),
            poses: BTreeMap::new(),
            samples: Vec::new(),
            collisions: Vec::new(),
            collided: BTreeSet::new(),
            open_intervals: BTreeMap::new(),
            intervals: Vec::new(),
            spawned: 0,
            despawned: 0,
            recorded_step: None,
        })
    }

    pub fn set_behavior_model(&mut self, m: Box<dyn BehaviorModel>) {
        self.model = m;
    }

    pub fn set_ego_policy(&mut self, p: Box<dyn EgoPolicy>) {
        self.ego_policy = Some(p);
    }

    pub fn time(&self) -> f64 {
        step_time(self.k)
    }

    pub fn step_index(&self) -> u64 {
        self.k
    }

    pub fn ego(&self) -> Option<u32> {
        self.ego
    }

    pub fn finished(&self) -> bool {
        self.k > self.total_steps || self.end_step.is_some_and(|e| self.k > e)
    }

    pub fn stats(&self) -> SimStats {
        SimStats {
            steps: self.k,
            spawned: self.spawned,
            despawned: self.despawned,
            active: self.agents.len(),
            pending_spawns: self.waiting.len() + self.events.len() - self.next_event,
        }
    }

    pub fn active_overrides(&self) -> &[Override] {
        self.orch.as_ref().map(|o| o.active()).unwrap_or(&[])
    }

    pub fn collisions(&self) -> &[CollisionRecord] {
        &self.collisions
    }

    pub fn snapshots(&self) -> Vec<AgentSnapshot> {
        self.agents.keys().filter_map(|&id| self.snapshot(id)).collect()
    }

    pub fn snapshot(&self, id: u32) -> Option<AgentSnapshot> {
        let a = self.agents.get(&id)?;
        let pose = self.poses.get(&id).copied().unwrap_or_else(|| self.render_pose(a));
        let (edge, lane, on_connector) = if a.is_rider() {
            match self.net.segs[a.seg].kind {
                SegKind::Lane { edge } => (Some(self.net.edge_ids[edge].clone()), Some(self.net.lane_ids[a.seg].clone()), false),
                SegKind::Connector { from_lane, .. } => {
                    (Some(self.net.edge_ids[self.net.lane_edge(from_lane)].clone()), None, true)
                }
            }
        } else {
            (None, None, false)
        };
        Some(AgentSnapshot {
            id,
            class: a.class,
            x: pose.p.x,
            y: pose.p.y,
            heading: pose.h,
            speed: a.v,
            accel: a.a,
            length: a.length,
            width: a.width,
            is_ego: a.is_ego,
            edge,
            lane,
            s: if a.is_rider() { a.s } else { a.walk.as_ref().map(|w| w.s).unwrap_or(0.0) },
            on_connector,
        })
    }

    /// Place a vehicle or cyclist directly on lane `lane_index` of the first route edge.
    pub fn insert_agent(&mut self, class: AgentClass, route: &[&str], lane_index: usize, s: f64, v: f64) -> Result<u32> {
        if class == AgentClass::Pedestrian {
            return Err(SimError::Domain("insert_agent places riders only".into()));
        }
        let route: Vec<String> = route.iter().map(|s| s.to_string()).collect();
        let ids = edge_route(&self.net, &route)?;
        let lane = *self.net.edge_lanes[ids[0]]
            .iter()
            .find(|&&l| self.net.lane_index_on_edge[l] == lane_index)
            .ok_or_else(|| SimError::Domain(format!("edge {} has no lane {lane_index}", route[0])))?;
        if !(s >= 0.0 && s <= self.net.seg_len(lane)) || !(v >= 0.0) {
            return Err(SimError::Domain(format!("station {s} / speed {v} out of range")));
        }
        let id = self.add_rider(class, ids, lane, s, v);
        self.refresh_occupancy();
        self.poses.insert(id, self.render_pose(&self.agents[&id]));
        Ok(id)
    }

    /// Advance one step: spawn, record, then update dynamics to the next step.
    pub fn step(&mut self) {
        if self.finished() {
            return;
        }
        self.spawn_due();
        self.refresh_occupancy();
        self.record();
        let at_end = self.k >= self.total_steps || self.end_step.is_some_and(|e| self.k >= e);
        if !at_end {
            self.orchestrate();
            self.apply_override_setup();
            self.update_claims();
            self.lane_changes();
            self.refresh_occupancy();
            self.update_peds_occupancy();
            self.move_riders();
            self.move_walkers();
            self.sync_intervals();
        }
        self.k += 1;
    }

    pub fn into_outcome(mut self) -> Result<SimOutcome> {
        let t_end = step_time(self.k.saturating_sub(1));
        let mut orch = self.orch.take().expect("orchestrator present");
        orch.close_all(t_end);
        for (_, mut iv) in std::mem::take(&mut self.open_intervals) {
            iv.end_t = t_end;
            self.intervals.push(iv);
        }
        self.intervals.sort_by(|a, b| a.start_t.total_cmp(&b.start_t).then(a.agent.cmp(&b.agent)));
        let Some(ego) = self.ego else {
            return Err(SimError::NoEgoCandidate(self.cfg.min_ego_route_m));
        };
        let stats = SimStats {
            steps: self.k,
            spawned: self.spawned,
            despawned: self.despawned,
            active: self.agents.len(),
            pending_spawns: self.waiting.len() + self.events.len() - self.next_event,
        };
        Ok(SimOutcome {
            trajectories: TrajectorySet { ego_id: Some(ego), samples: std::mem::take(&mut self.samples) },
            adversity_log: orch.into_log(),
            collisions: std::mem::take(&mut self.collisions),
            override_intervals: std::mem::take(&mut self.intervals),
            cones: std::mem::take(&mut self.cones),
            weather: std::mem::take(&mut self.weather),
            stats,
        })
    }

    // ---- spawning ----

    fn add_rider(&mut self, class: AgentClass, route: Vec<usize>, lane: usize, s: f64, v: f64) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        let spread = self.cfg.behavior.speed_factor_spread;
        let u: f64 = self.rng.gen();
        let is_ego = self.ego.is_none()
            && class == AgentClass::Vehicle
            && self.net.route_length(&route) >= self.cfg.min_ego_route_m;
        if is_ego {
            self.ego = Some(id);
        }
        let speed_factor = if is_ego { 1.0 } else { 1.0 + spread * (2.0 * u - 1.0) };
        let (length, width, height) = class.default_dims();
        self.agents.insert(
            id,
            Agent {
                id,
                class,
                length,
                width,
                height,
                is_ego,
                speed_factor,
                v,
                a: 0.0,
                seg: lane,
                s,
                route,
                route_idx: 0,
                claims: Vec::new(),
                request_since: None,
                blend_from: 0.0,
                blend_start: 0.0,
                blend_len: 0.0,
                last_change: f64::NEG_INFINITY,
                walk: None,
                ovr_state: OverrideState::None,
            },
        );
        self.spawned += 1;
        id
    }

    fn spawn_due(&mut self) {
        let t = self.time();
        while self.next_event < self.events.len() && self.events[self.next_event].t <= t + 1e-9 {
            let e = self.events[self.next_event].clone();
            let route = edge_route(&self.net, &e.route).expect("checked in new");
            self.waiting.push((e, route));
            self.next_event += 1;
        }
        let waiting = std::mem::take(&mut self.waiting);
        for (e, route) in waiting {
            self.refresh_occupancy();
            if !self.try_spawn(&e, &route) {
                self.waiting.push((e, route));
            }
        }
    }

    fn try_spawn(&mut self, e: &SpawnEvent, route: &[usize]) -> bool {
        if e.class == AgentClass::Pedestrian {
            let path = self.walk_path(route);
            let id = self.next_id;
            self.next_id += 1;
            let (length, width, height) = e.class.default_dims();
            self.agents.insert(
                id,
                Agent {
                    id,
                    class: e.class,
                    length,
                    width,
                    height,
                    is_ego: false,
                    speed_factor: 1.0,
                    v: self.cfg.behavior.pedestrian_walk_speed,
                    a: 0.0,
                    seg: 0,
                    s: 0.0,
                    route: route.to_vec(),
                    route_idx: 0,
                    claims: Vec::new(),
                    request_since: None,
                    blend_from: 0.0,
                    blend_start: 0.0,
                    blend_len: 0.0,
                    last_change: f64::NEG_INFINITY,
                    walk: Some(Walk { path, s: 0.0, next_crossing: 0, crossing: false, dash: None }),
                    ovr_state: OverrideState::None,
                },
            );
            self.spawned += 1;
            return true;
        }
        let p = self.idm_for(e.class);
        let (length, _, _) = e.class.default_dims();
        let need = length + p.s0 + e.speed * p.time_headway;
        let mut best: Option<(f64, usize)> = None;
        for &l in &self.net.edge_lanes[route[0]] {
            if !self.net.lane_allows[l].contains(&e.class) {
                continue;
            }
            let free = self.free_space_at_start(l);
            if free >= need && best.map_or(true, |(f, _)| free > f) {
                best = Some((free, l));
            }
        }
        let Some((_, lane)) = best else { return false };
        let s = length.min(self.net.seg_len(lane));
        self.add_rider(e.class, route.to_vec(), lane, s, e.speed);
        true
    }

    fn free_space_at_start(&self, lane: usize) -> f64 {
        let mut free = self.net.seg_len(lane);
        for &(s, id) in &self.occupancy[lane] {
            free = free.min(s - self.agents[&id].length);
        }
        if let Some(&(start, _)) = self.closures.get(&lane) {
            free = free.min(start);
        }
        free
    }

    fn walk_path(&mut self, route: &[usize]) -> usize {
        if let Some(&i) = self.walk_lookup.get(route) {
            return i;
        }
        let mut pts: Vec<Vec2> = Vec::new();
        for &e in route {
            let Some(&lane) = self.net.edge_lanes[e].first() else { continue };
            for &p in self.net.segs[lane].line.points() {
                if pts.last().map_or(true, |q: &Vec2| q.dist(p) > 1e-6) {
                    pts.push(p);
                }
            }
        }
        if pts.len() < 2 {
            let p = pts.first().copied().unwrap_or_default();
            pts = vec![p, p.add(Vec2::new(0.01, 0.0))];
        }
        let line = Polyline::new(pts);
        let crossings = self.crossings_along(&line);
        self.walk_paths.push(WalkPath { line, crossings });
        let i = self.walk_paths.len() - 1;
        self.walk_lookup.insert(route.to_vec(), i);
        i
    }

    fn corridor_hits(&self, p: Vec2) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for (i, seg) in self.net.segs.iter().enumerate() {
            let (lo, hi) = self.seg_boxes[i];
            if p.x < lo.x || p.x > hi.x || p.y < lo.y || p.y > hi.y {
                continue;
            }
            let lane = match seg.kind {
                SegKind::Lane { .. } => i,
                SegKind::Connector { from_lane, .. } => from_lane,
            };
            let allows = &self.net.lane_allows[lane];
            if !allows.contains(&AgentClass::Vehicle) && !allows.contains(&AgentClass::Cyclist) {
                continue;
            }
            let (s, d) = seg.line.project_signed(p);
            if s > 0.0 && s < seg.line.length() && d.abs() < seg.width / 2.0 + CORRIDOR_MARGIN_M {
                out.push((i, s));
            }
        }
        out
    }

    fn crossings_along(&self, line: &Polyline) -> Vec<Crossing> {
        let len = line.length();
        let n = (len / PED_SAMPLE_M).ceil().max(1.0) as usize;
        let mut out: Vec<Crossing> = Vec::new();
        let mut open: Option<Crossing> = None;
        for i in 0..=n {
            let s = (i as f64 * PED_SAMPLE_M).min(len);
            let hits = self.corridor_hits(line.pose_at(s).0);
            if hits.is_empty() {
                if let Some(c) = open.take() {
                    out.push(c);
                }
                continue;
            }
            let c = open.get_or_insert(Crossing { s0: s, s1: s, segs: Vec::new() });
            c.s1 = s;
            for (seg, st) in hits {
                if !c.segs.iter().any(|&(g, _)| g == seg) {
                    c.segs.push((seg, st));
                }
            }
        }
        if let Some(c) = open {
            out.push(c);
        }
        out
    }

    // ---- bookkeeping ----

    fn refresh_occupancy(&mut self) {
        for v in &mut self.occupancy {
            v.clear();
        }
        for a in self.agents.values().filter(|a| a.is_rider()) {
            self.occupancy[a.seg].push((a.s, a.id));
        }
        for v in &mut self.occupancy {
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
    }

    fn update_peds_occupancy(&mut self) {
        let mut occ: BTreeMap<usize, Vec<(f64, u32)>> = BTreeMap::new();
        for a in self.agents.values().filter(|a| !a.is_rider()) {
            let p = self.render_pose(a).p;
            for (seg, s) in self.corridor_hits(p) {
                occ.entry(seg).or_default().push((s, a.id));
            }
        }
        self.ped_occupancy = occ;
    }

    fn flags(&self, id: u32) -> Flags {
        let mut f = Flags::default();
        let Some(o) = self.orch.as_ref().and_then(|o| o.override_for(id)) else { return f };
        match &o.behavior {
            BehaviorKind::RunRedLight { .. } => {
                f.ignore_signal = true;
                f.ignore_conflicts = true;
            }
            BehaviorKind::FailToYield { .. } => f.ignore_conflicts = true,
            BehaviorKind::HardBrake { decel, .. } => f.hard_brake = Some(*decel),
            BehaviorKind::CyclistBlindSpot { .. } => {
                if self.agents.get(&id).is_some_and(|a| a.ovr_state == OverrideState::Released) {
                    f.ignore_conflicts = true;
                }
            }
            _ => {}
        }
        f
    }

    fn override_of(&self, id: u32) -> Option<&Override> {
        self.orch.as_ref().and_then(|o| o.override_for(id))
    }

    fn pinned_cyclist(&self, id: u32) -> bool {
        self.override_of(id).is_some_and(|o| matches!(o.behavior, BehaviorKind::CyclistBlindSpot { .. }))
            && self.agents.get(&id).is_some_and(|a| a.ovr_state == OverrideState::None)
    }

    fn idm_for(&self, class: AgentClass) -> IdmParams {
        match class {
            AgentClass::Cyclist => self.cfg.behavior.cyclist,
            _ => self.cfg.behavior.vehicle,
        }
    }

    fn lateral_offset(&self, a: &Agent, t: f64) -> f64 {
        let mut lat = 0.0;
        if a.blend_len > 0.0 && t - a.blend_start < a.blend_len {
            lat += a.blend_from * (1.0 - (t - a.blend_start) / a.blend_len);
        }
        if let Some(o) = self.override_of(a.id) {
            match &o.behavior {
                BehaviorKind::ZigzagDrift { amplitude_m, period_s, .. } => {
                    lat += amplitude_m * (std::f64::consts::TAU * (t - o.start_t) / period_s).sin();
                }
                BehaviorKind::CyclistBlindSpot { .. } if a.ovr_state == OverrideState::None => {
                    let w = self.net.segs[a.seg].width;
                    let toward_curb = (w / 2.0 - a.width / 2.0 - 0.1).max(0.0);
                    lat += match self.net.driving_side {
                        crate::map::DrivingSide::Right => toward_curb,
                        crate::map::DrivingSide::Left => -toward_curb,
                    };
                }
                _ => {}
            }
        }
        lat
    }

    fn render_pose(&self, a: &Agent) -> Pose {
        if let Some(w) = &a.walk {
            let line = w.dash.as_ref().unwrap_or(&self.walk_paths[w.path].line);
            let (p, h) = line.pose_at(w.s.clamp(0.0, line.length()));
            return Pose { p, h };
        }
        let line = &self.net.segs[a.seg].line;
        let centre = a.s - a.length / 2.0;
        let (p, h) = if centre >= 0.0 {
            line.pose_at(centre)
        } else {
            let (p0, h0) = line.pose_at(0.0);
            (p0.add(Vec2::from_heading(h0).scale(centre)), h0)
        };
        let lat = self.lateral_offset(a, self.time());
        let p = if lat != 0.0 { p.add(Vec2::from_heading(h).right_normal().scale(lat)) } else { p };
        Pose { p, h }
    }

    fn record(&mut self) {
        if self.recorded_step == Some(self.k) {
            return;
        }
        self.recorded_step = Some(self.k);
        let t = self.time();
        let mut poses = BTreeMap::new();
        for a in self.agents.values() {
            let pose = self.render_pose(a);
            poses.insert(a.id, pose);
            self.samples.push(TrajectorySample {
                t,
                id: a.id,
                class: a.class,
                x: pose.p.x,
                y: pose.p.y,
                heading: pose.h,
                speed: a.v,
                length: a.length,
                width: a.width,
                height: a.height,
                is_ego: a.is_ego,
            });
        }
        self.poses = poses;
        self.detect_collisions();
    }

    fn detect_collisions(&mut self) {
        let t = self.time();
        let list: Vec<(&Agent, Pose)> = self.agents.values().map(|a| (a, self.poses[&a.id])).collect();
        let mut hits = Vec::new();
        for i in 0..list.len() {
            for j in i + 1..list.len() {
                let (a, pa) = list[i];
                let (b, pb) = list[j];
                if a.class == AgentClass::Pedestrian && b.class == AgentClass::Pedestrian {
                    continue;
                }
                let reach = (a.length.hypot(a.width) + b.length.hypot(b.width)) / 2.0;
                if pa.p.dist(pb.p) > reach {
                    continue;
                }
                let qa = rect_corners(pa.p, pa.h, a.length, a.width);
                let qb = rect_corners(pb.p, pb.h, b.length, b.width);
                if quads_overlap(&qa, &qb) {
                    hits.push((a.id, b.id));
                }
            }
        }
        for (a, b) in hits {
            if self.collided.insert((a, b)) {
                log::debug!("collision at t={t}: {a} / {b}");
                self.collisions.push(CollisionRecord { t, a, b });
                if self.end_step.is_none() {
                    self.end_step = Some(self.k + (1.0 / DT).round() as u64);
                }
            }
        }
    }

    fn despawn(&mut self, id: u32) {
        self.agents.remove(&id);
        self.despawned += 1;
        let t = self.time();
        if let Some(o) = self.orch.as_mut() {
            o.finish(id, t);
        }
    }

    fn sync_intervals(&mut self) {
        let active: BTreeSet<u32> = self.active_overrides().iter().map(|o| o.agent).collect();
        let closed: Vec<u32> = self.open_intervals.keys().copied().filter(|a| !active.contains(a)).collect();
        for a in closed {
            self.close_interval(a);
        }
    }

    fn close_interval(&mut self, agent: u32) {
        let Some(mut iv) = self.open_intervals.remove(&agent) else { return };
        let t_next = step_time(self.k + 1);
        let end = self
            .orch
            .as_ref()
            .and_then(|o| {
                o.log()
                    .activations
                    .iter()
                    .find(|x| x.agent == agent && x.spec_id == iv.spec_id && x.t == iv.start_t)
                    .and_then(|x| x.end_t)
            })
            .unwrap_or(t_next);
        iv.end_t = end;
        self.intervals.push(iv);
    }

    // ---- adversities ----

    fn orchestrate(&mut self) {
        let cands: Vec<CandidateAgent> =
            self.agents.values().map(|a| CandidateAgent { id: a.id, class: a.class, is_ego: a.is_ego }).collect();
        let mut orch = self.orch.take().expect("orchestrator present");
        let fresh = orch.step(&*self, &cands);
        self.orch = Some(orch);
        for o in fresh {
            if let Some(a) = self.agents.get_mut(&o.agent) {
                a.ovr_state = OverrideState::None;
            }
            self.close_interval(o.agent);
            self.open_intervals.insert(
                o.agent,
                OverrideInterval {
                    agent: o.agent,
                    spec_id: o.spec_id.clone(),
                    behavior: o.behavior.name().to_string(),
                    start_t: o.start_t,
                    end_t: o.end_t,
                },
            );
        }
    }

    fn finish_override(&mut self, id: u32) {
        let t = self.time();
        if let Some(o) = self.orch.as_mut() {
            o.finish(id, t);
        }
    }

    /// One-off effects of active overrides that change routes or paths.
    fn apply_override_setup(&mut self) {
        let t = self.time();
        let active: Vec<Override> = self.active_overrides().to_vec();
        for o in active {
            let Some(a) = self.agents.get(&o.agent) else { continue };
            match &o.behavior {
                BehaviorKind::PedestrianDash { .. } if a.ovr_state == OverrideState::None => {
                    match self.dash_path(o.agent) {
                        Some(line) => {
                            let a = self.agents.get_mut(&o.agent).expect("alive");
                            let w = a.walk.as_mut().expect("pedestrian");
                            w.dash = Some(line);
                            w.s = 0.0;
                            a.ovr_state = OverrideState::Done;
                        }
                        None => self.finish_override(o.agent),
                    }
                }
                BehaviorKind::CutIn { lateral_duration_s, target_gap_m } if a.ovr_state == OverrideState::None => {
                    if let Some((lane, s_new)) = self.cut_in_target(o.agent, *target_gap_m) {
                        self.change_lane(o.agent, lane, s_new, *lateral_duration_s);
                        self.agents.get_mut(&o.agent).expect("alive").ovr_state = OverrideState::Done;
                    }
                }
                BehaviorKind::CutIn { lateral_duration_s, .. } if a.ovr_state == OverrideState::Done => {
                    if t - a.last_change >= *lateral_duration_s {
                        self.finish_override(o.agent);
                    }
                }
                BehaviorKind::CyclistBlindSpot { max_hold_s } if a.ovr_state == OverrideState::None => {
                    let ego = self.ego.and_then(|e| self.agents.get(&e));
                    let Some(ego) = ego else {
                        self.finish_override(o.agent);
                        continue;
                    };
                    let ego_turning_right = match self.net.segs[ego.seg].kind {
                        SegKind::Connector { .. } => self.net.turn_angle(ego.seg) < -0.5,
                        SegKind::Lane { .. } => false,
                    };
                    let same_edge = self.net.is_lane(a.seg)
                        && self.net.is_lane(ego.seg)
                        && self.net.lane_edge(a.seg) == self.net.lane_edge(ego.seg);
                    if ego_turning_right && self.net.is_lane(a.seg) {
                        self.release_blind_spot(o.agent);
                    } else if !same_edge || t - o.start_t > *max_hold_s {
                        self.finish_override(o.agent);
                    }
                }
                BehaviorKind::CyclistBlindSpot { .. } if a.ovr_state == OverrideState::Released => {
                    if a.route_idx + 1 >= a.route.len() && self.net.is_lane(a.seg) {
                        self.finish_override(o.agent);
                    }
                }
                _ => {}
            }
        }
    }

    fn release_blind_spot(&mut self, id: u32) {
        let a = &self.agents[&id];
        let straight = self.net.lane_out[a.seg]
            .iter()
            .copied()
            .min_by(|&x, &y| self.net.turn_angle(x).abs().total_cmp(&self.net.turn_angle(y).abs()).then(x.cmp(&y)));
        let Some(conn) = straight else {
            self.finish_override(id);
            return;
        };
        let SegKind::Connector { to_lane, .. } = self.net.segs[conn].kind else { unreachable!() };
        let next_edge = self.net.lane_edge(to_lane);
        let a = self.agents.get_mut(&id).expect("alive");
        a.route.truncate(a.route_idx + 1);
        a.route.push(next_edge);
        a.claims.clear();
        a.ovr_state = OverrideState::Released;
    }

    fn cut_in_target(&self, id: u32, target_gap: f64) -> Option<(usize, f64)> {
        let a = &self.agents[&id];
        let ego = self.agents.get(&self.ego?)?;
        if !self.net.is_lane(a.seg) || !self.net.is_lane(ego.seg) || a.seg == ego.seg {
            return None;
        }
        if self.net.lane_edge(a.seg) != self.net.lane_edge(ego.seg) {
            return None;
        }
        let adjacent = self.net.adjacent_lane(a.seg, true) == Some(ego.seg) || self.net.adjacent_lane(a.seg, false) == Some(ego.seg);
        if !adjacent {
            return None;
        }
        let s_new = a.s * self.net.seg_len(ego.seg) / self.net.seg_len(a.seg);
        let gap = s_new - a.length - ego.s;
        (gap > 0.0 && gap <= target_gap).then_some((ego.seg, s_new))
    }

    fn dash_path(&self, id: u32) -> Option<Polyline> {
        let ego = self.agents.get(&self.ego?)?;
        let ped = self.poses.get(&id)?.p;
        let line = &self.net.segs[ego.seg].line;
        let w = self.net.segs[ego.seg].width;
        let ahead = (ego.v * 3.0).max(15.0);
        let s = (ego.s + ahead).min(line.length());
        let (c, h) = line.pose_at(s);
        let n = Vec2::from_heading(h).right_normal();
        let side = if ped.sub(c).dot(n) >= 0.0 { 1.0 } else { -1.0 };
        let reach = w / 2.0 + 1.5;
        let near = c.add(n.scale(side * reach));
        let far = c.sub(n.scale(side * reach));
        Some(Polyline::new(vec![ped, near, far]))
    }

    // ---- junction control ----

    fn signal_green(&self, edge: usize) -> bool {
        match self.net.edge_signal[edge] {
            Some(sig) => self.signals[sig].is_green(&self.net.edge_ids[edge], self.time()),
            None => true,
        }
    }

    fn next_connector(&self, a: &Agent) -> Option<usize> {
        if !self.net.is_lane(a.seg) || a.route_idx + 1 >= a.route.len() {
            return None;
        }
        self.net.connector.get(&(a.seg, a.route[a.route_idx + 1])).copied()
    }

    fn update_claims(&mut self) {
        let t = self.time();
        // releases
        let ids: Vec<u32> = self.agents.keys().copied().collect();
        for &id in &ids {
            let a = &self.agents[&id];
            if a.claims.is_empty() {
                continue;
            }
            let ignore_signal = self.flags(id).ignore_signal;
            let p = self.idm_for(a.class);
            let mut keep = Vec::new();
            for &c in &a.claims {
                let SegKind::Connector { from_lane, to_lane, .. } = self.net.segs[c].kind else { continue };
                let holding = if a.seg == from_lane {
                    let to_end = self.net.seg_len(from_lane) - a.s;
                    let can_stop = to_end > a.v * a.v / (2.0 * p.b) + 1.0;
                    ignore_signal || self.signal_green(self.net.lane_edge(from_lane)) || !can_stop
                } else {
                    a.seg == c || (a.seg == to_lane && a.s - a.length < RELEASE_CLEARANCE_M)
                };
                if holding {
                    keep.push(c);
                }
            }
            self.agents.get_mut(&id).expect("alive").claims = keep;
        }

        // candidates: per lane, the first vehicle from the front that still needs its claim
        let mut cands: Vec<(f64, u32, usize)> = Vec::new();
        for lane in 0..self.net.lane_ids.len() {
            for &(_, id) in self.occupancy[lane].iter().rev() {
                let a = &self.agents[&id];
                let Some(conn) = self.next_connector(a) else { break };
                if a.claims.contains(&conn) {
                    continue;
                }
                if self.flags(id).ignore_conflicts && (self.flags(id).ignore_signal || self.signal_green(self.net.lane_edge(lane))) {
                    break;
                }
                let p = self.idm_for(a.class);
                let zone = (a.v * a.v / (2.0 * p.b) + a.v + 5.0).clamp(8.0, 40.0);
                if self.net.seg_len(lane) - a.s <= zone {
                    let since = a.request_since.unwrap_or(t);
                    cands.push((since, id, conn));
                }
                break;
            }
        }
        for &(since, id, _) in &cands {
            self.agents.get_mut(&id).expect("alive").request_since.get_or_insert(since);
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, id, conn) in cands {
            if self.may_claim(id, conn) {
                let a = self.agents.get_mut(&id).expect("alive");
                a.claims.push(conn);
                a.request_since = None;
            }
        }
    }

    fn may_claim(&self, id: u32, conn: usize) -> bool {
        let a = &self.agents[&id];
        let SegKind::Connector { from_lane, to_lane, .. } = self.net.segs[conn].kind else { return false };
        let from_edge = self.net.lane_edge(from_lane);
        let f = self.flags(id);
        if !f.ignore_signal && !self.signal_green(from_edge) {
            return false;
        }
        let conflicts: &[usize] = self.net.conflicts.get(&conn).map(Vec::as_slice).unwrap_or(&[]);
        if !f.ignore_conflicts {
            for other in self.agents.values() {
                if other.id == id {
                    continue;
                }
                if other.claims.iter().any(|c| conflicts.contains(c)) {
                    return false;
                }
                if conflicts.contains(&other.seg) && self.to_lane(other.seg) != to_lane {
                    return false;
                }
                if let Some(oc) = self.next_connector(other) {
                    if conflicts.contains(&oc) && !other.claims.contains(&oc) {
                        let SegKind::Connector { from_lane: ol, .. } = self.net.segs[oc].kind else { continue };
                        let oe = self.net.lane_edge(ol);
                        if self.net.edge_priority[oe] > self.net.edge_priority[from_edge] && self.signal_green(oe) {
                            let eta = (self.net.seg_len(ol) - other.s) / other.v.max(0.1);
                            if eta <= YIELD_ETA_S {
                                return false;
                            }
                        }
                    }
                }
            }
        }
        // downstream room
        let p = self.idm_for(a.class);
        let mut room = self.net.seg_len(to_lane);
        for &(s, oid) in &self.occupancy[to_lane] {
            let o = &self.agents[&oid];
            room = room.min(s - o.length + o.v * ROOM_LOOKAHEAD_S);
        }
        for other in self.agents.values() {
            if other.id == id || other.seg == to_lane {
                continue;
            }
            for &c in &other.claims {
                if let SegKind::Connector { to_lane: tl, .. } = self.net.segs[c].kind {
                    if tl == to_lane {
                        room -= other.length + p.s0;
                    }
                }
            }
        }
        let route_ends_here = a.route_idx + 2 >= a.route.len();
        let to_edge = self.net.lane_edge(to_lane);
        let need = if self.net.edge_priority[to_edge] > self.net.edge_priority[from_edge] {
            KEEP_CLEAR_VEHICLES * (a.length + p.s0)
        } else {
            a.length + p.s0
        };
        room >= need || (route_ends_here && room >= a.length)
    }

    /// A connector is passable once claimed, or when the agent ignores conflicts.
    fn passable(&self, a: &Agent, conn: usize, f: Flags) -> bool {
        if a.claims.contains(&conn) {
            return true;
        }
        if !f.ignore_conflicts {
            return false;
        }
        let SegKind::Connector { from_lane, .. } = self.net.segs[conn].kind else { return false };
        f.ignore_signal || self.signal_green(self.net.lane_edge(from_lane))
    }

    /// Someone without right of way occupies a connector crossing `conn`. Merges into the
    /// same lane are left to the car-following leader search.
    fn intruder_on_conflict(&self, id: u32, conn: usize) -> bool {
        let Some(conflicts) = self.net.conflicts.get(&conn) else { return false };
        let target = self.to_lane(conn);
        conflicts.iter().any(|&c| {
            self.to_lane(c) != target
                && self.occupancy[c].iter().any(|&(_, oid)| oid != id && !self.agents[&oid].claims.contains(&c))
        })
    }

    fn to_lane(&self, conn: usize) -> usize {
        match self.net.segs[conn].kind {
            SegKind::Connector { to_lane, .. } => to_lane,
            SegKind::Lane { .. } => conn,
        }
    }

    // ---- car following ----

    fn build_path(&self, a: &Agent, f: Flags, limit: f64) -> (Vec<PathItem>, Option<f64>) {
        let mut items = vec![PathItem { seg: a.seg, offset: -a.s }];
        let mut seg = a.seg;
        let mut ri = a.route_idx;
        let mut off = -a.s;
        loop {
            let end = off + self.net.seg_len(seg);
            if end > limit {
                return (items, None);
            }
            match self.net.segs[seg].kind {
                SegKind::Lane { .. } => {
                    if ri + 1 >= a.route.len() {
                        return (items, None);
                    }
                    let Some(&conn) = self.net.connector.get(&(seg, a.route[ri + 1])) else {
                        return (items, Some(end));
                    };
                    if !self.passable(a, conn, f) || (!f.ignore_conflicts && self.intruder_on_conflict(a.id, conn)) {
                        return (items, Some(end));
                    }
                    seg = conn;
                }
                SegKind::Connector { to_lane, .. } => {
                    seg = to_lane;
                    ri += 1;
                }
            }
            off = end;
            items.push(PathItem { seg, offset: off });
        }
    }

    fn find_leader(&self, a: &Agent, f: Flags, skip: Option<u32>) -> (Option<Leader>, Vec<PathItem>) {
        let (items, stop) = self.build_path(a, f, self.cfg.lookahead_m);
        let mut best: Option<Leader> = stop.map(|g| Leader { gap: g, v: 0.0 });
        let consider = |gap: f64, v: f64, best: &mut Option<Leader>| {
            if best.map_or(true, |b| gap < b.gap) {
                *best = Some(Leader { gap, v });
            }
        };
        for (k, item) in items.iter().enumerate() {
            if best.is_some_and(|b| item.offset > b.gap) {
                break;
            }
            for &(s, oid) in &self.occupancy[item.seg] {
                if oid == a.id || Some(oid) == skip {
                    continue;
                }
                if k == 0 && s <= a.s {
                    continue;
                }
                let o = &self.agents[&oid];
                consider(item.offset + s - o.length, o.v, &mut best);
            }
            if let Some(peds) = self.ped_occupancy.get(&item.seg) {
                for &(s, _) in peds {
                    if k == 0 && s <= a.s {
                        continue;
                    }
                    consider(item.offset + s - 0.3, 0.0, &mut best);
                }
            }
            if let Some(&(start, _)) = self.closures.get(&item.seg) {
                if k > 0 || a.s <= start + 1e-9 {
                    consider(item.offset + start, 0.0, &mut best);
                }
            }
            if let SegKind::Connector { to_lane, .. } = self.net.segs[item.seg].kind {
                if !f.ignore_conflicts {
                    let mine = item.offset + self.net.seg_len(item.seg);
                    for &c2 in &self.net.lane_in[to_lane] {
                        if c2 == item.seg {
                            continue;
                        }
                        for &(s2, oid) in &self.occupancy[c2] {
                            if oid == a.id || Some(oid) == skip {
                                continue;
                            }
                            let o = &self.agents[&oid];
                            let rem = self.net.seg_len(c2) - s2;
                            let entering = o.claims.contains(&c2) || rem < o.length;
                            if rem < mine && entering {
                                consider(mine - rem - o.length, o.v, &mut best);
                            }
                        }
                    }
                }
            }
        }
        if self.net.is_lane(a.seg) {
            let len = self.net.seg_len(a.seg);
            let on_path = items.get(1).map(|i| i.seg);
            for &c in &self.net.lane_out[a.seg] {
                if Some(c) == on_path {
                    continue;
                }
                for &(s2, oid) in &self.occupancy[c] {
                    let o = &self.agents[&oid];
                    if s2 - o.length < DIVERGE_WATCH_M {
                        consider(len - a.s + s2 - o.length, o.v, &mut best);
                    }
                }
            }
            for left in [true, false] {
                let Some(adj) = self.net.adjacent_lane(a.seg, left) else { continue };
                let scale = len / self.net.seg_len(adj);
                for &(s2, oid) in &self.occupancy[adj] {
                    let o = &self.agents[&oid];
                    let Some(ov) = self.override_of(oid) else { continue };
                    let BehaviorKind::ZigzagDrift { .. } = ov.behavior else { continue };
                    let lat = self.lateral_offset(o, self.time());
                    let toward_me = self.lateral_toward(adj, a.seg) * lat;
                    if toward_me + o.width / 2.0 > self.net.segs[adj].width / 2.0 {
                        let s_m = s2 * scale;
                        if s_m > a.s {
                            consider(s_m - o.length - a.s, o.v, &mut best);
                        }
                    }
                }
            }
        }
        (best, items)
    }

    /// +1 when `to` lies to the right of `from`, -1 otherwise.
    fn lateral_toward(&self, from: usize, to: usize) -> f64 {
        let (p, _) = self.net.segs[to].line.pose_at(self.net.seg_len(to) / 2.0);
        let (_, d) = self.net.segs[from].line.project_signed(p);
        if d >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    fn desired_speed(&self, a: &Agent, p: &IdmParams, items: &[PathItem]) -> f64 {
        let mut v0 = p.v0.min(a.speed_factor * self.net.segs[a.seg].speed_limit);
        for it in items.iter().skip(1) {
            let lim = a.speed_factor * self.net.segs[it.seg].speed_limit;
            v0 = v0.min((lim * lim + 2.0 * p.b * it.offset.max(0.0)).sqrt());
        }
        v0.max(0.1)
    }

    fn rider_acceleration(&self, a: &Agent) -> f64 {
        let f = self.flags(a.id);
        if let Some(d) = f.hard_brake {
            return -d;
        }
        let mut p = self.idm_for(a.class);
        let pinned = self.pinned_cyclist(a.id);
        let skip = if pinned {
            self.ego
        } else if a.is_ego {
            self.agents.values().find(|o| self.pinned_cyclist(o.id)).map(|o| o.id)
        } else {
            None
        };
        let (leader, items) = self.find_leader(a, f, skip);
        p.v0 = self.desired_speed(a, &p, &items);
        let mut acc = match leader {
            Some(l) => self.model.acceleration(a.v, l.v, l.gap, &p),
            None => self.model.acceleration(a.v, a.v, f64::INFINITY, &p),
        };
        if pinned {
            if let Some(ego) = self.ego.and_then(|e| self.agents.get(&e)) {
                if ego.seg == a.seg {
                    let target = ego.s - 1.0;
                    let track = (0.8 * (target - a.s) + 1.5 * (ego.v - a.v)).clamp(-p.b, self.cfg.behavior.vehicle.a_max);
                    let cap = if a.v >= 10.0 { 0.0 } else { f64::INFINITY };
                    acc = acc.min(track).min(cap);
                }
            }
        }
        if a.is_ego {
            if let Some(policy) = &self.ego_policy {
                if let Some(snap) = self.snapshot(a.id) {
                    acc = policy.acceleration(&snap, acc).clamp(-MAX_DECEL, p.a_max);
                }
            }
        }
        acc
    }

    fn move_riders(&mut self) {
        let ids: Vec<u32> = self.agents.values().filter(|a| a.is_rider()).map(|a| a.id).collect();
        let accs: Vec<(u32, f64)> = ids.iter().map(|&id| (id, self.rider_acceleration(&self.agents[&id]))).collect();
        let mut gone = Vec::new();
        for (id, acc) in accs {
            let f = self.flags(id);
            let mut a = self.agents.remove(&id).expect("alive");
            a.a = acc;
            a.v = (a.v + acc * DT).max(0.0);
            a.s += a.v * DT;
            let mut exited = false;
            loop {
                let len = self.net.seg_len(a.seg);
                if a.s <= len {
                    break;
                }
                match self.net.segs[a.seg].kind {
                    SegKind::Lane { .. } => {
                        if a.route_idx + 1 >= a.route.len() {
                            exited = true;
                            break;
                        }
                        let conn = self.net.connector.get(&(a.seg, a.route[a.route_idx + 1])).copied();
                        match conn {
                            Some(c) if self.passable(&a, c, f) => {
                                a.s -= len;
                                a.seg = c;
                            }
                            _ => {
                                log::debug!("agent {id} held at lane end");
                                a.s = len;
                                a.v = 0.0;
                                break;
                            }
                        }
                    }
                    SegKind::Connector { to_lane, .. } => {
                        a.s -= len;
                        a.seg = to_lane;
                        a.route_idx += 1;
                    }
                }
            }
            self.agents.insert(id, a);
            if exited {
                gone.push(id);
            }
        }
        for id in gone {
            self.despawn(id);
        }
        self.refresh_occupancy();
    }

    // ---- lane changes ----

    fn neighbors_on(&self, lane: usize, s: f64, me: u32) -> (Option<(u32, Neighbor)>, Option<(u32, Neighbor)>) {
        let mut leader: Option<(u32, Neighbor)> = None;
        let mut follower: Option<(u32, Neighbor)> = None;
        let me_len = self.agents[&me].length;
        for &(so, oid) in &self.occupancy[lane] {
            if oid == me {
                continue;
            }
            let o = &self.agents[&oid];
            if so > s {
                let gap = so - o.length - s;
                if leader.map_or(true, |(_, l)| gap < l.gap) {
                    leader = Some((oid, Neighbor { gap, v: o.v }));
                }
            } else {
                let gap = s - me_len - so;
                if follower.map_or(true, |(_, f)| gap < f.gap) {
                    follower = Some((oid, Neighbor { gap, v: o.v }));
                }
            }
        }
        if let Some(&(start, _)) = self.closures.get(&lane) {
            if s <= start {
                let gap = start - s;
                if leader.map_or(true, |(_, l)| gap < l.gap) {
                    leader = Some((u32::MAX, Neighbor { gap, v: 0.0 }));
                }
            }
        }
        (leader, follower)
    }

    fn closed_near(&self, lane: usize, s: f64, length: f64) -> bool {
        self.closures.get(&lane).is_some_and(|&(start, end)| s > start - 30.0 && s - length < end + 5.0)
    }

    fn change_lane(&mut self, id: u32, target: usize, s_new: f64, blend: f64) {
        let t = self.time();
        let old = self.render_pose(&self.agents[&id]);
        let a = self.agents.get_mut(&id).expect("alive");
        a.seg = target;
        a.s = s_new.clamp(0.0, self.net.seg_len(target));
        let (_, d) = self.net.segs[target].line.project_signed(old.p);
        a.blend_from = d;
        a.blend_start = t;
        a.blend_len = blend;
        a.last_change = t;
        a.request_since = None;
    }

    fn lane_changes(&mut self) {
        let t = self.time();
        let lc = self.cfg.behavior.lane_change;
        let ids: Vec<u32> = self
            .agents
            .values()
            .filter(|a| a.class == AgentClass::Vehicle && self.net.is_lane(a.seg))
            .map(|a| a.id)
            .collect();
        for id in ids {
            let a = &self.agents[&id];
            if !a.claims.is_empty() || t - a.last_change < lc.cooldown_s || self.override_of(id).is_some() {
                continue;
            }
            let len = self.net.seg_len(a.seg);
            let closure_ahead = self
                .closures
                .get(&a.seg)
                .is_some_and(|&(start, _)| a.s <= start && start - a.s < CLOSURE_MERGE_M);
            if len - a.s < LANE_CHANGE_END_MARGIN_M && !closure_ahead {
                continue;
            }
            let mut p = self.idm_for(a.class);
            let (leader, items) = self.find_leader(a, self.flags(id), None);
            p.v0 = self.desired_speed(a, &p, &items);
            let (cur_leader, cur_follower) = self.neighbors_on(a.seg, a.s, id);
            let current_leader = match (leader, cur_leader) {
                (Some(l), _) => Some(Neighbor { gap: l.gap, v: l.v }),
                (None, c) => c.map(|x| x.1),
            };
            let mut opts: [Option<(usize, f64, LaneOption)>; 2] = [None, None];
            for (slot, left) in [(0usize, true), (1usize, false)] {
                let Some(adj) = self.net.adjacent_lane(a.seg, left) else { continue };
                if !self.net.lane_allows[adj].contains(&a.class) {
                    continue;
                }
                let s_new = a.s * self.net.seg_len(adj) / len;
                if self.closed_near(adj, s_new, a.length) {
                    continue;
                }
                let (l, f) = self.neighbors_on(adj, s_new, id);
                let follower_leader = l.map(|(_, n)| n).zip(f).map(|(ln, (_, fnb))| Neighbor {
                    gap: ln.gap + fnb.gap + a.length,
                    v: ln.v,
                });
                opts[slot] = Some((adj, s_new, LaneOption { leader: l.map(|x| x.1), follower: f.map(|x| x.1), follower_leader }));
            }
            let open_dir = |slot: usize| closure_ahead && opts[slot].is_some();
            let situation = LaneChangeSituation {
                v: a.v,
                length: a.length,
                params: p,
                current_leader,
                current_follower: cur_follower.map(|x| x.1),
                left: opts[0].as_ref().map(|o| o.2),
                right: opts[1].as_ref().map(|o| o.2),
                mandatory_left: open_dir(0),
                mandatory_right: open_dir(1) && !open_dir(0),
            };
            let decision = lane_change_decision(&situation, &lc);
            let chosen = match decision {
                LaneDecision::Keep => None,
                LaneDecision::Left => opts[0].as_ref(),
                LaneDecision::Right => opts[1].as_ref(),
            };
            if let Some(&(lane, s_new, _)) = chosen {
                self.change_lane(id, lane, s_new, lc.blend_s);
                self.refresh_occupancy();
            }
        }
    }

    // ---- pedestrians ----

    fn approach_eta(&self, seg: usize, station: f64, depth: usize, extra: f64) -> f64 {
        let mut eta = f64::INFINITY;
        for &(s, oid) in &self.occupancy[seg] {
            let o = &self.agents[&oid];
            if s - o.length > station + 1.0 {
                continue;
            }
            let dist = station - s + extra;
            eta = eta.min(if dist <= 0.0 { 0.0 } else { dist / o.v.max(0.1) });
        }
        if depth == 0 {
            return eta;
        }
        let preds: Vec<usize> = match self.net.segs[seg].kind {
            SegKind::Lane { .. } => self.net.lane_in[seg].clone(),
            SegKind::Connector { from_lane, .. } => vec![from_lane],
        };
        for pseg in preds {
            let plen = self.net.seg_len(pseg);
            eta = eta.min(self.approach_eta(pseg, plen, depth - 1, extra + station));
        }
        eta
    }

    fn crossing_clear(&self, c: &Crossing) -> bool {
        let need = self.cfg.behavior.pedestrian_gap_s;
        c.segs.iter().all(|&(seg, st)| self.approach_eta(seg, st, 2, 0.0) >= need)
    }

    fn move_walkers(&mut self) {
        let walk_speed = self.cfg.behavior.pedestrian_walk_speed;
        let ids: Vec<u32> = self.agents.values().filter(|a| !a.is_rider()).map(|a| a.id).collect();
        let mut gone = Vec::new();
        for id in ids {
            let a = &self.agents[&id];
            let w = a.walk.as_ref().expect("pedestrian");
            if let Some(line) = &w.dash {
                let mult = match self.override_of(id).map(|o| &o.behavior) {
                    Some(BehaviorKind::PedestrianDash { speed_multiplier }) => *speed_multiplier,
                    _ => 1.0,
                };
                let v = walk_speed * mult;
                let end = line.length();
                let a = self.agents.get_mut(&id).expect("alive");
                let w = a.walk.as_mut().expect("pedestrian");
                w.s += v * DT;
                a.v = v;
                if w.s >= end {
                    gone.push(id);
                }
                continue;
            }
            let path = &self.walk_paths[w.path];
            let end = path.line.length();
            let mut v = walk_speed;
            let mut s_next = w.s + v * DT;
            let mut next_crossing = w.next_crossing;
            let mut crossing = w.crossing;
            if let Some(c) = path.crossings.get(next_crossing) {
                if crossing {
                    if s_next > c.s1 {
                        next_crossing += 1;
                        crossing = false;
                    }
                } else if s_next >= c.s0 - PED_SAMPLE_M {
                    if self.crossing_clear(c) {
                        crossing = true;
                    } else {
                        s_next = w.s.max((c.s0 - PED_SAMPLE_M).min(s_next)).min(w.s.max(c.s0 - PED_SAMPLE_M));
                        v = (s_next - w.s) / DT;
                    }
                }
            }
            let a = self.agents.get_mut(&id).expect("alive");
            let w = a.walk.as_mut().expect("pedestrian");
            w.s = s_next;
            w.next_crossing = next_crossing;
            w.crossing = crossing;
            a.v = v.max(0.0);
            if w.s >= end {
                gone.push(id);
            }
        }
        for id in gone {
            self.despawn(id);
        }
    }

    // ---- trigger support ----

    fn ego_pose(&self) -> Option<(Pose, &Agent)> {
        let id = self.ego?;
        let a = self.agents.get(&id)?;
        Some((*self.poses.get(&id)?, a))
    }

    /// Station of the conflict point on connector `mine` against `theirs`: the end for a
    /// merge, the middle for a crossing.
    fn conflict_station(&self, mine: usize, theirs: usize) -> f64 {
        let len = self.net.seg_len(mine);
        if self.to_lane(mine) == self.to_lane(theirs) {
            len
        } else {
            len / 2.0
        }
    }

    /// Time window during which `a` would occupy a point `dist` ahead, driving free-road
    /// IDM toward `v_cap`.
    fn occupancy_window(&self, a: &Agent, dist: f64, v_cap: f64) -> (f64, f64) {
        let mut p = self.idm_for(a.class);
        p.v0 = v_cap.max(0.1);
        let (mut t, mut s, mut v) = (0.0, 0.0, a.v);
        let mut enter = None;
        let horizon = 30.0;
        while t < horizon {
            if enter.is_none() && s >= dist {
                enter = Some(t);
            }
            if s >= dist + a.length {
                return (enter.unwrap_or(t), t);
            }
            v = (v + self.model.acceleration(v, v, f64::INFINITY, &p) * DT).max(0.0);
            s += v * DT;
            t += DT;
        }
        (enter.unwrap_or(f64::INFINITY), f64::INFINITY)
    }

    /// Junction time to collision between the ego and `a`: when both would occupy the
    /// point where their connectors meet at the same time, the later entry time.
    fn junction_ttc(&self, ego: &Agent, a: &Agent) -> Option<f64> {
        let theirs = if self.net.is_lane(a.seg) { self.next_connector(a)? } else { a.seg };
        let conflicts = self.net.conflicts.get(&theirs)?;
        let free = Flags { ignore_conflicts: true, ignore_signal: true, hard_brake: None };
        let (items, _) = self.build_path(ego, free, self.cfg.lookahead_m);
        let mine = items.iter().find(|it| conflicts.contains(&it.seg))?;
        let d_ego = mine.offset + self.conflict_station(mine.seg, theirs);
        let d_them = if a.seg == theirs { -a.s } else { self.net.seg_len(a.seg) - a.s }
            + self.conflict_station(theirs, mine.seg);
        if d_ego + ego.length < 0.0 || d_them + a.length < 0.0 {
            return None;
        }
        let (e0, e1) = self.occupancy_window(ego, d_ego, self.net.segs[mine.seg].speed_limit);
        let (a0, a1) = self.occupancy_window(a, d_them, self.net.segs[theirs].speed_limit);
        (e0 <= a1 && a0 <= e1).then_some(e0.max(a0))
    }

    fn along_path_gap(&self, from: &Agent, to: u32) -> Option<f64> {
        let (items, _) = self.build_path(from, Flags { ignore_conflicts: true, ignore_signal: true, hard_brake: None }, self.cfg.lookahead_m);
        let target = self.agents.get(&to)?;
        if !target.is_rider() {
            return None;
        }
        for (k, it) in items.iter().enumerate() {
            if it.seg == target.seg && (k > 0 || target.s > from.s) {
                return Some(it.offset + target.s - target.length);
            }
        }
        None
    }
}

impl WorldView for World {
    fn time(&self) -> f64 {
        step_time(self.k)
    }

    fn dist_to_ego(&self, agent: u32) -> Option<f64> {
        let (ego, _) = self.ego_pose()?;
        Some(self.poses.get(&agent)?.p.dist(ego.p))
    }

    fn ttc_to_ego(&self, agent: u32) -> f64 {
        let Some((ego_pose, ego)) = self.ego_pose() else { return f64::INFINITY };
        let Some(a) = self.agents.get(&agent) else { return f64::INFINITY };
        if let Some(gap) = self.along_path_gap(ego, agent) {
            let closing = ego.v - a.v;
            return if closing > 0.0 { gap.max(0.0) / closing } else { f64::INFINITY };
        }
        if a.is_rider() {
            if let Some(gap) = self.along_path_gap(a, ego.id) {
                let closing = a.v - ego.v;
                return if closing > 0.0 { gap.max(0.0) / closing } else { f64::INFINITY };
            }
            if let Some(t) = self.junction_ttc(ego, a) {
                return t;
            }
        }
        let Some(pose) = self.poses.get(&agent) else { return f64::INFINITY };
        let dp = pose.p.sub(ego_pose.p);
        let dv = Vec2::from_heading(pose.h).scale(a.v).sub(Vec2::from_heading(ego_pose.h).scale(ego.v));
        let range = dp.norm();
        if range <= 0.0 {
            return 0.0;
        }
        let closing = -dp.dot(dv) / range;
        if closing <= 0.0 {
            return f64::INFINITY;
        }
        ((range - (a.length + ego.length) / 2.0).max(0.0)) / closing
    }

    fn agent_edge(&self, agent: u32) -> Option<String> {
        let a = self.agents.get(&agent)?;
        if !a.is_rider() {
            return None;
        }
        let edge = match self.net.segs[a.seg].kind {
            SegKind::Lane { edge } => edge,
            SegKind::Connector { from_lane, .. } => self.net.lane_edge(from_lane),
        };
        Some(self.net.edge_ids[edge].clone())
    }

    fn bearing_from_ego(&self, agent: u32) -> Option<f64> {
        let (ego, _) = self.ego_pose()?;
        let p = self.poses.get(&agent)?.p;
        Some(wrap_angle(p.sub(ego.p).heading() - ego.h))
    }

    fn signal_color(&self, node: &str, agent: u32) -> Option<SignalColor> {
        let a = self.agents.get(&agent)?;
        if !a.is_rider() {
            return None;
        }
        let edge = match self.net.segs[a.seg].kind {
            SegKind::Lane { edge } => edge,
            SegKind::Connector { from_lane, .. } => self.net.lane_edge(from_lane),
        };
        if self.net.node_ids[self.net.edge_to_node[edge]] != node {
            return None;
        }
        self.net.edge_signal[edge]?;
        Some(if self.signal_green(edge) { SignalColor::Green } else { SignalColor::Red })
    }

    fn agent_class(&self, agent: u32) -> Option<AgentClass> {
        self.agents.get(&agent).map(|a| a.class)
    }
}
