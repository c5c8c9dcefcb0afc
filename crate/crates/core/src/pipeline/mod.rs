//! One configuration in, one self-describing scenario package out.
//!
//! Package layout under the output directory:
//!
//! ```text
//! manifest.json                 every other file with its sha256
//! metadata.json                 coordinate, seed, scenario description
//! map/source.osm                retrieved OSM extract
//! map/network.json              lane-level network
//! map/network.nod.xml, .edg.xml SUMO plain files
//! map/network.xodr              OpenDRIVE
//! demand/demand.json            demand table and spawn schedule
//! trajectories/trajectories.jsonl
//! adversity/log.json            decisions, activations, episode weight
//! adversity/events.json         collisions, override intervals, cones, weather
//! hdmap/front/NNNNNN.png        front sequence
//! hdmap/multiview/<view>/NNNNNN.png
//! hdmap/timing.json
//! streetview/<view>.png         images the prompts were built from
//! prompts/prompts.json
//! ```

mod config;
mod describe;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversity::{AdversityLog, Cuboid, WeatherTag};
use crate::demand::{
    demand_from_speeds, manual_demand, spawn_schedule, DemandTable, HttpSpeedSource, JsonFileSpeedSource, SpawnEvent,
    TrafficSpeedSource,
};
use crate::geo::{parse_osm, retrieve, serialize_osm, FileSource, GeoPoint, MapSource, OverpassSource, RetrievalQuery};
use crate::hdmap::{render_views, resample_trajectory, SceneInputs, TimingManifest};
use crate::map::{
    build_network, export_opendrive, export_scenario_json, export_sumo_plain, import_scenario_json, to_local_frame,
    validate_network, NetworkDefaults, RoadNetwork,
};
use crate::prompt::{
    compass_from_heading, generate_prompts, CachedImageSource, FixtureVlmClient, HttpImageSource, HttpVlmClient,
    ImageSource, PromptContext, VlmClient,
};
use crate::sim::{simulate_with, CollisionRecord, OverrideInterval, SimStats, TrajectorySet};

pub use config::{
    DemandConfig, DemandMode, Location, PipelineConfig, PromptConfig, PromptMode, RenderConfig, RetrievalConfig,
    RigSource, SimulationConfig,
};
pub use describe::{bearing_word, describe_scenario, NOMINAL};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    FetchMap,
    Convert,
    Demand,
    Simulate,
    Render,
    Prompt,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::FetchMap, Stage::Convert, Stage::Demand, Stage::Simulate, Stage::Render, Stage::Prompt];

    pub fn name(self) -> &'static str {
        match self {
            Stage::FetchMap => "fetch-map",
            Stage::Convert => "convert",
            Stage::Demand => "demand",
            Stage::Simulate => "simulate",
            Stage::Render => "render",
            Stage::Prompt => "prompt",
        }
    }
}

/// Seed for one stage: the first eight bytes (little-endian) of
/// `sha256("scenforge/" || stage || master_seed as 8 little-endian bytes)`.
pub fn sub_seed(master: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"scenforge/");
    h.update(stage.as_bytes());
    h.update(master.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandFile {
    pub table: DemandTable,
    pub spawns: Vec<SpawnEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventsFile {
    pub collisions: Vec<CollisionRecord>,
    pub override_intervals: Vec<OverrideInterval>,
    pub cones: Vec<Cuboid>,
    pub weather: Vec<WeatherTag>,
    pub stats: SimStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub coordinate: GeoPoint,
    pub seed: u64,
    pub description: String,
    pub activated_kinds: Vec<String>,
    pub episode_weight: f64,
    pub ego_id: Option<u32>,
    pub horizon_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";
pub const FAILED_DIR: &str = "failed";

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            if dir == root && p.file_name().is_some_and(|n| n == FAILED_DIR) {
                continue;
            }
            list_files(root, &p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Hash every file under `root` except the manifest itself and `failed/`.
pub fn build_manifest(root: &Path) -> std::io::Result<Manifest> {
    let mut paths = Vec::new();
    list_files(root, root, &mut paths)?;
    let mut files = Vec::new();
    for p in paths {
        let rel = p.strip_prefix(root).expect("listed under root");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if rel == MANIFEST {
            continue;
        }
        let bytes = std::fs::read(&p)?;
        files.push(ManifestEntry { path: rel, sha256: hex::encode(Sha256::digest(&bytes)), bytes: bytes.len() as u64 });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(Manifest { files })
}

/// Runs stages against one output directory. Each stage reads only files written by earlier stages.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub offline: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, out: PathBuf, offline: bool) -> Result<Self> {
        config.validate(offline)?;
        Ok(Pipeline { config, out, offline })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&self, stage: Stage, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            std::fs::create_dir_all(d).map_err(|e| fail(stage, format!("{}: {e}", d.display())))?;
        }
        std::fs::write(&p, bytes).map_err(|e| fail(stage, format!("{}: {e}", p.display())))
    }

    fn write_json<T: Serialize>(&self, stage: Stage, rel: &str, v: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(v).map_err(|e| fail(stage, e.to_string()))?;
        self.write(stage, rel, (text + "\n").as_bytes())
    }

    fn read(&self, stage: Stage, rel: &str) -> Result<Vec<u8>> {
        let p = self.path(rel);
        std::fs::read(&p).map_err(|e| fail(stage, format!("missing input {rel}: {e}")))
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, stage: Stage, rel: &str) -> Result<T> {
        let bytes = self.read(stage, rel)?;
        serde_json::from_slice(&bytes).map_err(|e| fail(stage, format!("{rel}: {e}")))
    }

    fn network(&self, stage: Stage) -> Result<RoadNetwork> {
        let text = String::from_utf8(self.read(stage, "map/network.json")?).map_err(|e| fail(stage, e.to_string()))?;
        import_scenario_json(&text).map_err(|e| fail(stage, e.to_string()))
    }

    fn trajectories(&self, stage: Stage) -> Result<TrajectorySet> {
        let bytes = self.read(stage, "trajectories/trajectories.jsonl")?;
        TrajectorySet::read_jsonl(bytes.as_slice()).map_err(|e| fail(stage, e.to_string()))
    }

    /// Run one stage and refresh the manifest.
    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        log::info!("stage {}", stage.name());
        match stage {
            Stage::FetchMap => self.fetch_map()?,
            Stage::Convert => self.convert()?,
            Stage::Demand => self.demand()?,
            Stage::Simulate => self.simulate()?,
            Stage::Render => self.render()?,
            Stage::Prompt => self.prompt()?,
        }
        self.write_manifest(stage)
    }

    /// Run every stage in order. On failure the partial outputs move to `failed/`.
    pub fn run(&self) -> Result<Manifest> {
        for s in Stage::ALL {
            if let Err(e) = self.run_stage(s) {
                if let Err(m) = self.retain_failed() {
                    log::error!("could not move partial outputs to {FAILED_DIR}/: {m}");
                }
                return Err(e);
            }
        }
        build_manifest(&self.out).map_err(|e| fail(Stage::Prompt, e.to_string()))
    }

    fn retain_failed(&self) -> std::io::Result<()> {
        let failed = self.path(FAILED_DIR);
        if failed.exists() {
            std::fs::remove_dir_all(&failed)?;
        }
        std::fs::create_dir_all(&failed)?;
        for e in std::fs::read_dir(&self.out)? {
            let p = e?.path();
            if p != failed {
                std::fs::rename(&p, failed.join(p.file_name().expect("entry has a name")))?;
            }
        }
        Ok(())
    }

    fn write_manifest(&self, stage: Stage) -> Result<()> {
        let m = build_manifest(&self.out).map_err(|e| fail(stage, e.to_string()))?;
        self.write_json(stage, MANIFEST, &m)
    }

    fn fetch_map(&self) -> Result<()> {
        let st = Stage::FetchMap;
        let c = &self.config;
        let source: Box<dyn MapSource> = match &c.location.osm_file {
            Some(p) => Box::new(FileSource::new(p)),
            None if self.offline => return Err(PipelineError::Config("offline runs need location.osm_file".into())),
            None => {
                let mut s = OverpassSource::default();
                if let Some(u) = &c.retrieval.overpass_url {
                    s.url = u.clone();
                }
                Box::new(s)
            }
        };
        let q = RetrievalQuery::Radius { center: c.location.coordinate, radius_m: c.retrieval.radius_m };
        let g = retrieve(source.as_ref(), &q).map_err(|e| fail(st, e.to_string()))?;
        if g.ways.is_empty() {
            return Err(fail(st, "no roads within the retrieval radius".into()));
        }
        self.write(st, "map/source.osm", serialize_osm(&g).as_bytes())
    }

    fn convert(&self) -> Result<()> {
        let st = Stage::Convert;
        let osm = self.read(st, "map/source.osm")?;
        let g = parse_osm(&osm).map_err(|e| fail(st, e.to_string()))?.graph;
        let pg = to_local_frame(&g, self.config.location.coordinate).map_err(|e| fail(st, e.to_string()))?;
        let n = build_network(&pg, &NetworkDefaults::default()).map_err(|e| fail(st, e.to_string()))?;
        let report = validate_network(&n);
        if report.duplicate_lane_ids > 0 || report.dangling_references > 0 {
            return Err(fail(st, format!("network is inconsistent: {report:?}")));
        }
        if !report.passes() {
            log::warn!("network validation: {report:?}");
        }
        self.write(st, "map/network.json", export_scenario_json(&n).as_bytes())?;
        let sumo = export_sumo_plain(&n);
        self.write(st, "map/network.nod.xml", sumo.nodes_xml.as_bytes())?;
        self.write(st, "map/network.edg.xml", sumo.edges_xml.as_bytes())?;
        self.write(st, "map/network.xodr", export_opendrive(&n).as_bytes())
    }

    fn demand(&self) -> Result<()> {
        let st = Stage::Demand;
        let c = &self.config.demand;
        let n = self.network(st)?;
        let table = match c.mode {
            DemandMode::Manual => manual_demand(&c.flows, &n),
            DemandMode::Speeds => {
                let speeds = if let Some(p) = &c.speed_feed {
                    JsonFileSpeedSource { path: p.clone() }.speeds()
                } else if let (Some(u), false) = (&c.speed_url, self.offline) {
                    HttpSpeedSource { url: u.clone(), key: std::env::var("TSW_TRAFFIC_KEY").ok(), timeout: Duration::from_secs(30) }
                        .speeds()
                } else {
                    Ok(Vec::new())
                };
                speeds.and_then(|s| demand_from_speeds(&s, c.greenshields, &n, &c.options))
            }
        }
        .map_err(|e| fail(st, e.to_string()))?;
        let seed = sub_seed(self.config.seed, st.name());
        let spawns =
            spawn_schedule(&table, &n, self.config.simulation.horizon_s, seed).map_err(|e| fail(st, e.to_string()))?;
        self.write_json(st, "demand/demand.json", &DemandFile { table, spawns })
    }

    fn simulate(&self) -> Result<()> {
        let st = Stage::Simulate;
        let c = &self.config;
        let n = self.network(st)?;
        let d: DemandFile = self.read_json(st, "demand/demand.json")?;
        for s in &c.adversities {
            s.check_references(&n).map_err(|e| fail(st, e.to_string()))?;
        }
        let cfg = c.sim_config(sub_seed(c.seed, st.name()));
        let out = simulate_with(&n, &d.spawns, &c.adversities, &cfg).map_err(|e| fail(st, e.to_string()))?;
        self.write(st, "trajectories/trajectories.jsonl", out.trajectories.to_jsonl().as_bytes())?;
        self.write_json(st, "adversity/log.json", &out.adversity_log)?;
        let meta = Metadata {
            coordinate: c.location.coordinate,
            seed: c.seed,
            description: describe_scenario(&out.adversity_log, &out.trajectories, &out.weather),
            activated_kinds: out.adversity_log.activated_kinds(),
            episode_weight: out.adversity_log.episode_weight,
            ego_id: out.trajectories.ego_id,
            horizon_s: c.simulation.horizon_s,
        };
        self.write_json(
            st,
            "adversity/events.json",
            &EventsFile {
                collisions: out.collisions,
                override_intervals: out.override_intervals,
                cones: out.cones,
                weather: out.weather,
                stats: out.stats,
            },
        )?;
        self.write_json(st, "metadata.json", &meta)
    }

    fn render(&self) -> Result<()> {
        let st = Stage::Render;
        let n = self.network(st)?;
        let traj = self.trajectories(st)?;
        let log: AdversityLog = self.read_json(st, "adversity/log.json")?;
        let events: EventsFile = self.read_json(st, "adversity/events.json")?;
        let first_activation = log.activations.iter().map(|a| a.t).min_by(f64::total_cmp);
        let scene = SceneInputs { samples: &traj.samples, ego_id: traj.ego_id, cones: &events.cones, first_activation };
        let rig = self.config.rig()?;
        let r = &self.config.render;
        let dir = self.path("hdmap");
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| fail(st, e.to_string()))?;
        }
        render_views(&dir, &n, &scene, &rig, &r.timing, &r.palette).map_err(|e| fail(st, e.to_string()))?;
        Ok(())
    }

    fn prompt(&self) -> Result<()> {
        let st = Stage::Prompt;
        let c = &self.config;
        let timing: TimingManifest = self.read_json(st, "hdmap/timing.json")?;
        let log: AdversityLog = self.read_json(st, "adversity/log.json")?;
        let events: EventsFile = self.read_json(st, "adversity/events.json")?;
        let base = match c.prompt.base_heading_deg {
            Some(h) => h,
            None => {
                let traj = self.trajectories(st)?;
                let tracks = traj.tracks();
                let ego = tracks.get(&timing.ego_id).ok_or_else(|| fail(st, "ego track missing".into()))?;
                let p = resample_trajectory(ego, timing.fps, timing.anchor_s, 1).map_err(|e| fail(st, e.to_string()))?;
                compass_from_heading(p[0].heading)
            }
        };
        let mut statics: Vec<String> = log.static_applied.iter().map(|s| s.behavior.clone()).collect();
        statics.sort();
        statics.dedup();
        let rig = c.rig()?;
        let ctx = PromptContext {
            coord: c.location.coordinate,
            base_heading_deg: base,
            rig: &rig,
            weather: &events.weather,
            statics: &statics,
            style_prefix: &c.prompt.style_prefix,
        };
        let live = c.prompt.mode == PromptMode::Live && !self.offline;
        let (images, vlm): (Box<dyn ImageSource>, Box<dyn VlmClient>) = if live {
            (
                Box::new(HttpImageSource::from_env().map_err(|e| fail(st, e))?),
                Box::new(HttpVlmClient::from_env().map_err(|e| fail(st, e))?),
            )
        } else {
            let dir = c.prompt.streetview_dir.clone().ok_or_else(|| PipelineError::Config("prompt.streetview_dir missing".into()))?;
            let fx = c.prompt.vlm_fixture.as_ref().ok_or_else(|| PipelineError::Config("prompt.vlm_fixture missing".into()))?;
            (Box::new(CachedImageSource { dir }), Box::new(FixtureVlmClient::load(fx).map_err(|e| fail(st, e))?))
        };
        let (bundle, fetched) = generate_prompts(&ctx, images.as_ref(), vlm.as_ref()).map_err(|e| fail(st, e.to_string()))?;
        for (view, img) in fetched {
            let ext = if img.starts_with(b"\x89PNG") { "png" } else { "jpg" };
            self.write(st, &format!("streetview/{}.{ext}", view.dir()), &img)?;
        }
        self.write_json(st, "prompts/prompts.json", &bundle)
    }
}

fn fail(stage: Stage, message: String) -> PipelineError {
    PipelineError::Stage { stage: stage.name(), message }
}

/// Parsed manifest of a finished package, keyed by path.
pub fn read_manifest(root: &Path) -> std::io::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(root.join(MANIFEST))?;
    let m: Manifest = serde_json::from_str(&text).map_err(std::io::Error::other)?;
    Ok(m.files.into_iter().map(|e| (e.path, e.sha256)).collect())
}
