use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::adversity::AdversitySpec;
use crate::demand::{GreenshieldsParams, ManualFlow, SpeedDemandOptions};
use crate::geo::{GeoPoint, MAX_RADIUS_M};
use crate::hdmap::{Palette, RenderTiming, Rig};
use crate::prompt::DEFAULT_STYLE_PREFIX;
use crate::sim::{BehaviorParams, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Location {
    /// Scenario coordinate; also the origin of the local metric frame.
    pub coordinate: GeoPoint,
    /// Local OSM extract used instead of a live query.
    #[serde(default)]
    pub osm_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub radius_m: f64,
    pub overpass_url: Option<String>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { radius_m: 300.0, overpass_url: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandMode {
    /// Flows from observed speeds; edges without observations use the default flow.
    #[default]
    Speeds,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandConfig {
    pub mode: DemandMode,
    /// Speed feed document for offline runs.
    pub speed_feed: Option<PathBuf>,
    /// Live speed feed endpoint; the key comes from `TSW_TRAFFIC_KEY`.
    pub speed_url: Option<String>,
    pub flows: Vec<ManualFlow>,
    pub greenshields: GreenshieldsParams,
    pub options: SpeedDemandOptions,
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig {
            mode: DemandMode::Speeds,
            speed_feed: None,
            speed_url: None,
            flows: Vec::new(),
            greenshields: GreenshieldsParams::default(),
            options: SpeedDemandOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub horizon_s: f64,
    pub min_ego_route_m: f64,
    pub global_cap: usize,
    pub lookahead_m: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let d = SimConfig::default();
        SimulationConfig {
            horizon_s: 60.0,
            min_ego_route_m: d.min_ego_route_m,
            global_cap: d.global_cap,
            lookahead_m: d.lookahead_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RigSource {
    File(PathBuf),
    Inline(Rig),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub timing: RenderTiming,
    pub palette: Palette,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Cached images and recorded model responses.
    #[default]
    Offline,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    pub mode: PromptMode,
    pub streetview_dir: Option<PathBuf>,
    pub vlm_fixture: Option<PathBuf>,
    pub style_prefix: String,
    /// Compass heading for the street-view requests; the ego heading at the window start when absent.
    pub base_heading_deg: Option<f64>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            mode: PromptMode::Offline,
            streetview_dir: None,
            vlm_fixture: None,
            style_prefix: DEFAULT_STYLE_PREFIX.into(),
            base_heading_deg: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub location: Location,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub demand: DemandConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub behavior: BehaviorParams,
    #[serde(default)]
    pub adversities: Vec<AdversitySpec>,
    #[serde(default)]
    pub rig: Option<RigSource>,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub prompt: PromptConfig,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    /// Read a config file and resolve its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_json(&text)?;
        c.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(c)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.location.osm_file.as_mut() {
            fix(p);
        }
        if let Some(p) = self.demand.speed_feed.as_mut() {
            fix(p);
        }
        if let Some(RigSource::File(p)) = self.rig.as_mut() {
            fix(p);
        }
        if let Some(p) = self.prompt.streetview_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.prompt.vlm_fixture.as_mut() {
            fix(p);
        }
        if let Some(p) = self.output_dir.as_mut() {
            fix(p);
        }
    }

    pub fn rig(&self) -> Result<Rig, PipelineError> {
        let rig = match &self.rig {
            None => Rig::default(),
            Some(RigSource::Inline(r)) => r.clone(),
            Some(RigSource::File(p)) => {
                let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
        };
        rig.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(rig)
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            horizon_s: self.simulation.horizon_s,
            seed,
            behavior: self.behavior,
            min_ego_route_m: self.simulation.min_ego_route_m,
            global_cap: self.simulation.global_cap,
            lookahead_m: self.simulation.lookahead_m,
        }
    }

    /// Checks that need no network or stage outputs.
    pub fn validate(&self, offline: bool) -> Result<(), PipelineError> {
        self.location.coordinate.validate().map_err(|e| config_err(e.to_string()))?;
        let r = self.retrieval.radius_m;
        if !(r > 0.0 && r <= MAX_RADIUS_M) {
            return Err(config_err(format!("retrieval.radius_m {r} outside (0, {MAX_RADIUS_M}]")));
        }
        if offline && self.location.osm_file.is_none() {
            return Err(config_err("offline runs need location.osm_file"));
        }
        if let Some(p) = &self.location.osm_file {
            if !p.is_file() {
                return Err(config_err(format!("osm file {} not found", p.display())));
            }
        }
        match self.demand.mode {
            DemandMode::Manual if self.demand.flows.is_empty() => {
                return Err(config_err("manual demand needs at least one flow"));
            }
            DemandMode::Speeds if offline && self.demand.speed_url.is_some() && self.demand.speed_feed.is_none() => {
                return Err(config_err("offline runs cannot use demand.speed_url; give demand.speed_feed"));
            }
            _ => {}
        }
        self.demand.greenshields.validate().map_err(|e| config_err(e.to_string()))?;
        self.sim_config(0).validate().map_err(|e| config_err(e.to_string()))?;
        for s in &self.adversities {
            s.validate().map_err(|e| config_err(e.to_string()))?;
        }
        let mut ids: Vec<&str> = self.adversities.iter().map(|s| s.id.as_str()).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_err("adversity ids must be unique"));
        }
        self.rig()?;
        self.render.timing.validate().map_err(|e| config_err(e.to_string()))?;
        if let Some(h) = self.prompt.base_heading_deg {
            if !(0.0..360.0).contains(&h) {
                return Err(config_err(format!("prompt.base_heading_deg {h} outside [0, 360)")));
            }
        }
        if self.prompt.mode == PromptMode::Offline || offline {
            for (name, p) in [("prompt.streetview_dir", &self.prompt.streetview_dir), ("prompt.vlm_fixture", &self.prompt.vlm_fixture)] {
                match p {
                    None => return Err(config_err(format!("offline prompts need {name}"))),
                    Some(p) if !p.exists() => return Err(config_err(format!("{name} {} not found", p.display()))),
                    _ => {}
                }
            }
        }
        Ok(())
    }
}
