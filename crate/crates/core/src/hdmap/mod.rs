//! Six-camera HDMap conditioning frames: map polylines and agent cuboids rasterized
//! through a pinhole rig at a fixed frame rate.

mod camera;
mod raster;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversity::Cuboid;
use crate::class::AgentClass;
use crate::geom::{rect_corners, wrap_angle, Vec2};
use crate::map::{BoundaryKind, RoadNetwork};
use crate::sim::TrajectorySample;

pub use camera::{
    back_project, clip_segment_near, intrinsics_from_fov, project, world_to_camera, CameraModel, CameraPose,
    CameraSpec, EgoPose, Intrinsics, Rig, ViewName, NEAR_PLANE_M,
};
pub use raster::{Frame, Palette, Rgb};

#[derive(Debug, Error)]
pub enum HdmapError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("frame time {t:.4} s outside trajectory range [{start:.4}, {end:.4}] s")]
    OutOfWindow { t: f64, start: f64, end: f64 },
    #[error("window of {needed:.3} s does not fit an episode of {available:.3} s")]
    WindowTooLong { needed: f64, available: f64 },
    #[error("no ego trajectory to render from")]
    NoEgo,
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for HdmapError {
    fn from(e: std::io::Error) -> Self {
        HdmapError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HdmapError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    LaneLine,
    RoadBoundary,
    Crosswalk,
}

/// Static map geometry at ground level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapElements {
    pub polylines: Vec<(ElementKind, Vec<Vec2>)>,
}

impl MapElements {
    /// Lane lines, road boundaries and closed crosswalk outlines of a network.
    pub fn from_network(n: &RoadNetwork) -> Self {
        let mut polylines = Vec::new();
        for b in &n.boundaries {
            let kind = match b.kind {
                BoundaryKind::LaneLine => ElementKind::LaneLine,
                BoundaryKind::RoadBoundary => ElementKind::RoadBoundary,
            };
            polylines.push((kind, b.polyline.clone()));
        }
        for c in &n.crosswalks {
            let mut ring = c.polygon.clone();
            if let Some(&first) = ring.first() {
                ring.push(first);
            }
            polylines.push((ElementKind::Crosswalk, ring));
        }
        MapElements { polylines }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxKind {
    Agent(AgentClass),
    Cone,
}

/// An oriented cuboid standing on the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBox {
    pub kind: BoxKind,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl SceneBox {
    pub fn cone(c: &Cuboid) -> Self {
        SceneBox { kind: BoxKind::Cone, x: c.x, y: c.y, heading: c.heading, length: c.length, width: c.width, height: c.height }
    }

    fn corners(&self) -> [[f64; 3]; 8] {
        let q = rect_corners(Vec2::new(self.x, self.y), self.heading, self.length, self.width);
        let mut out = [[0.0; 3]; 8];
        for (i, p) in q.iter().enumerate() {
            out[i] = [p.x, p.y, 0.0];
            out[i + 4] = [p.x, p.y, self.height];
        }
        out
    }
}

const CUBOID_EDGES: [(usize, usize); 12] =
    [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)];

fn box_color(p: &Palette, k: BoxKind) -> Rgb {
    match k {
        BoxKind::Agent(AgentClass::Vehicle) => p.vehicle,
        BoxKind::Agent(AgentClass::Pedestrian) => p.pedestrian,
        BoxKind::Agent(AgentClass::Cyclist) => p.cyclist,
        BoxKind::Cone => p.cone,
    }
}

fn draw_segment(f: &mut Frame, m: &CameraModel, a: [f64; 3], b: [f64; 3], c: Rgb) {
    let pa = m.pose.to_camera(a);
    let pb = m.pose.to_camera(b);
    let Some((pa, pb)) = clip_segment_near(pa, pb, NEAR_PLANE_M) else { return };
    let (Some(ua), Some(ub)) = (project(&m.intrinsics, pa), project(&m.intrinsics, pb)) else { return };
    f.draw_line(ua, ub, c);
}

/// Rasterize one camera view. Boxes are drawn far to near so nearer edges win.
pub fn render_frame(map: &MapElements, boxes: &[SceneBox], model: &CameraModel, palette: &Palette) -> Frame {
    let mut f = Frame::black(model.width, model.height);
    for (kind, pts) in &map.polylines {
        let c = match kind {
            ElementKind::LaneLine => palette.lane_line,
            ElementKind::RoadBoundary => palette.road_boundary,
            ElementKind::Crosswalk => palette.crosswalk,
        };
        for w in pts.windows(2) {
            draw_segment(&mut f, model, [w[0].x, w[0].y, 0.0], [w[1].x, w[1].y, 0.0], c);
        }
    }
    let mut order: Vec<(f64, &SceneBox)> = boxes
        .iter()
        .map(|b| (model.pose.to_camera([b.x, b.y, b.height / 2.0])[2], b))
        .filter(|(z, b)| *z > -(b.length + b.width))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, b) in order {
        let c = box_color(palette, b.kind);
        let k = b.corners();
        for (i, j) in CUBOID_EDGES {
            draw_segment(&mut f, model, k[i], k[j], c);
        }
    }
    f
}

/// Interpolated agent state at a frame time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

const TIME_EPS: f64 = 1e-9;

fn pose_at(track: &[&TrajectorySample], t: f64) -> Option<Pose> {
    let first = track.first()?;
    let last = track.last()?;
    if t < first.t - TIME_EPS || t > last.t + TIME_EPS {
        return None;
    }
    let i = track.partition_point(|s| s.t <= t + TIME_EPS);
    let a = track[i.saturating_sub(1)];
    if (a.t - t).abs() <= TIME_EPS || i >= track.len() {
        return Some(Pose { t, x: a.x, y: a.y, heading: a.heading, speed: a.speed });
    }
    let b = track[i];
    let w = (t - a.t) / (b.t - a.t);
    Some(Pose {
        t,
        x: a.x + (b.x - a.x) * w,
        y: a.y + (b.y - a.y) * w,
        heading: wrap_angle(a.heading + wrap_angle(b.heading - a.heading) * w),
        speed: a.speed + (b.speed - a.speed) * w,
    })
}

/// Frame `k` time of a window.
pub fn frame_time(start: f64, k: usize, fps: f64) -> f64 {
    start + k as f64 / fps
}

/// Resample one agent's time-ordered samples to `frames` frames starting at `start`.
pub fn resample_trajectory(track: &[&TrajectorySample], fps: f64, start: f64, frames: usize) -> Result<Vec<Pose>> {
    if track.is_empty() {
        return Err(HdmapError::Domain("empty trajectory".into()));
    }
    if !(fps > 0.0) {
        return Err(HdmapError::Domain(format!("fps {fps} must be positive")));
    }
    let (t0, t1) = (track[0].t, track[track.len() - 1].t);
    (0..frames)
        .map(|k| {
            let t = frame_time(start, k, fps);
            pose_at(track, t).ok_or(HdmapError::OutOfWindow { t, start: t0, end: t1 })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderTiming {
    pub fps: f64,
    pub front_frames: usize,
    pub front_width: u32,
    pub front_height: u32,
    pub multiview_frames: usize,
    pub multiview_width: u32,
    pub multiview_height: u32,
    /// Window start; derived from the adversity log when absent.
    pub anchor_s: Option<f64>,
    /// Lead time before the first activation.
    pub pre_roll_s: f64,
}

impl Default for RenderTiming {
    fn default() -> Self {
        RenderTiming {
            fps: 24.0,
            front_frames: 120,
            front_width: 1280,
            front_height: 704,
            multiview_frames: 57,
            multiview_width: 1024,
            multiview_height: 576,
            anchor_s: None,
            pre_roll_s: 2.0,
        }
    }
}

impl RenderTiming {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(HdmapError::Domain(format!("fps {} must be positive", self.fps)));
        }
        if self.front_frames == 0 || self.multiview_frames == 0 {
            return Err(HdmapError::Domain("frame counts must be positive".into()));
        }
        if self.multiview_frames > self.front_frames {
            return Err(HdmapError::Domain("multiview window is cut from the front window and cannot be longer".into()));
        }
        if self.front_width == 0 || self.front_height == 0 || self.multiview_width == 0 || self.multiview_height == 0 {
            return Err(HdmapError::Domain("empty image size".into()));
        }
        if !(self.pre_roll_s >= 0.0) {
            return Err(HdmapError::Domain("pre_roll_s must be non-negative".into()));
        }
        Ok(())
    }

    /// Time between the first and last front frame.
    pub fn front_span_s(&self) -> f64 {
        (self.front_frames - 1) as f64 / self.fps
    }
}

/// Where the render window starts: the configured anchor, else `pre_roll_s` before the first
/// activation, else the start of the ego trajectory. Clamped so the window fits the ego track.
pub fn choose_anchor(timing: &RenderTiming, first_activation: Option<f64>, ego_start: f64, ego_end: f64) -> Result<(f64, AnchorSource)> {
    let span = timing.front_span_s();
    if span > ego_end - ego_start + TIME_EPS {
        return Err(HdmapError::WindowTooLong { needed: span, available: ego_end - ego_start });
    }
    let (raw, source) = match (timing.anchor_s, first_activation) {
        (Some(a), _) => (a, AnchorSource::Configured),
        (None, Some(t)) => (t - timing.pre_roll_s, AnchorSource::Activation),
        (None, None) => (ego_start, AnchorSource::EpisodeStart),
    };
    // Keep 10 Hz-grid anchors exact so frame times hit samples.
    let anchor = (raw.clamp(ego_start, ego_end - span) * 1e9).round() / 1e9;
    Ok((anchor, source))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    Configured,
    Activation,
    EpisodeStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub name: ViewName,
    pub heading_deg: f64,
    pub fov_h_deg: f64,
    pub width: u32,
    pub height: u32,
    pub mount: [f64; 3],
    pub pitch_deg: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraRecord {
    fn new(spec: &CameraSpec) -> Result<Self> {
        let k = intrinsics_from_fov(spec.fov_h_deg, spec.width, spec.height)?;
        Ok(CameraRecord {
            name: spec.name,
            heading_deg: spec.heading_deg,
            fov_h_deg: spec.fov_h_deg,
            width: spec.width,
            height: spec.height,
            mount: spec.mount,
            pitch_deg: spec.pitch_deg,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub dir: String,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub start_s: f64,
    /// Exclusive end of the window.
    pub end_s: f64,
    pub cameras: Vec<CameraRecord>,
}

/// Contents of `hdmap/timing.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingManifest {
    pub fps: f64,
    pub anchor_s: f64,
    pub anchor_source: AnchorSource,
    pub ego_id: u32,
    pub front: SequenceRecord,
    pub multiview: SequenceRecord,
}

impl TimingManifest {
    pub fn total_multiview_frames(&self) -> usize {
        self.multiview.frames * self.multiview.cameras.len()
    }
}

/// Everything drawn besides the map.
#[derive(Debug, Clone, Default)]
pub struct SceneInputs<'a> {
    pub samples: &'a [TrajectorySample],
    pub ego_id: Option<u32>,
    pub cones: &'a [Cuboid],
    pub first_activation: Option<f64>,
}

/// A resolved render: window, per-frame ego poses and scene boxes, and the camera of each sequence.
pub struct RenderPlan {
    pub manifest: TimingManifest,
    map: MapElements,
    palette: Palette,
    ego: Vec<EgoPose>,
    boxes: Vec<Vec<SceneBox>>,
    /// Sequence directory and camera; index 0 is the front sequence.
    sequences: Vec<(String, CameraSpec, usize)>,
}

impl RenderPlan {
    pub fn new(map: MapElements, scene: &SceneInputs, rig: &Rig, timing: &RenderTiming, palette: &Palette) -> Result<Self> {
        rig.validate()?;
        timing.validate()?;
        let ego_id = scene.ego_id.ok_or(HdmapError::NoEgo)?;
        let mut tracks: BTreeMap<u32, Vec<&TrajectorySample>> = BTreeMap::new();
        for s in scene.samples {
            tracks.entry(s.id).or_default().push(s);
        }
        let ego_track = tracks.get(&ego_id).ok_or(HdmapError::NoEgo)?;
        let (ego_start, ego_end) = (ego_track[0].t, ego_track[ego_track.len() - 1].t);
        let t = timing;
        let (anchor, source) = choose_anchor(t, scene.first_activation, ego_start, ego_end)?;
        let ego: Vec<EgoPose> = resample_trajectory(ego_track, t.fps, anchor, t.front_frames)?
            .into_iter()
            .map(|p| EgoPose { x: p.x, y: p.y, heading: p.heading })
            .collect();
        let cones: Vec<SceneBox> = scene.cones.iter().map(SceneBox::cone).collect();
        let boxes = (0..t.front_frames)
            .map(|k| {
                let ft = frame_time(anchor, k, t.fps);
                let mut v = cones.clone();
                for (&id, track) in &tracks {
                    if id == ego_id {
                        continue;
                    }
                    if let Some(p) = pose_at(track, ft) {
                        let s = track[0];
                        v.push(SceneBox {
                            kind: BoxKind::Agent(s.class),
                            x: p.x,
                            y: p.y,
                            heading: p.heading,
                            length: s.length,
                            width: s.width,
                            height: s.height,
                        });
                    }
                }
                v
            })
            .collect();

        let front_spec = rig.camera(ViewName::F).with_size(t.front_width, t.front_height);
        let multi: Vec<CameraSpec> =
            ViewName::ALL.iter().map(|&v| rig.camera(v).with_size(t.multiview_width, t.multiview_height)).collect();
        let mut sequences = vec![("front".to_string(), front_spec.clone(), t.front_frames)];
        sequences.extend(multi.iter().map(|s| (format!("multiview/{}", s.name.dir()), s.clone(), t.multiview_frames)));

        let manifest = TimingManifest {
            fps: t.fps,
            anchor_s: anchor,
            anchor_source: source,
            ego_id,
            front: SequenceRecord {
                dir: "front".into(),
                frames: t.front_frames,
                width: t.front_width,
                height: t.front_height,
                start_s: anchor,
                end_s: frame_time(anchor, t.front_frames, t.fps),
                cameras: vec![CameraRecord::new(&front_spec)?],
            },
            multiview: SequenceRecord {
                dir: "multiview".into(),
                frames: t.multiview_frames,
                width: t.multiview_width,
                height: t.multiview_height,
                start_s: anchor,
                end_s: frame_time(anchor, t.multiview_frames, t.fps),
                cameras: multi.iter().map(CameraRecord::new).collect::<Result<_>>()?,
            },
        };
        Ok(RenderPlan { manifest, map, palette: palette.clone(), ego, boxes, sequences })
    }

    /// Directory (relative to the hdmap root) and frame count of every sequence.
    pub fn sequences(&self) -> impl Iterator<Item = (&str, usize)> {
        self.sequences.iter().map(|(d, _, n)| (d.as_str(), *n))
    }

    pub fn frame(&self, sequence: usize, k: usize) -> Result<Frame> {
        let (_, spec, n) = &self.sequences[sequence];
        if k >= *n {
            return Err(HdmapError::Domain(format!("frame {k} beyond sequence length {n}")));
        }
        let model = CameraModel::new(self.ego[k], spec)?;
        Ok(render_frame(&self.map, &self.boxes[k], &model, &self.palette))
    }
}

/// Render and write `front/NNNNNN.png`, `multiview/<view>/NNNNNN.png` and `timing.json` under `dir`.
pub fn render_views(
    dir: &Path,
    map: &RoadNetwork,
    scene: &SceneInputs,
    rig: &Rig,
    timing: &RenderTiming,
    palette: &Palette,
) -> Result<TimingManifest> {
    let plan = RenderPlan::new(MapElements::from_network(map), scene, rig, timing, palette)?;
    let mut jobs = Vec::new();
    for (i, (d, n)) in plan.sequences().enumerate() {
        let d = dir.join(d);
        std::fs::create_dir_all(&d)?;
        jobs.extend((0..n).map(|k| (i, k, d.join(format!("{k:06}.png")))));
    }
    jobs.par_iter().try_for_each(|(i, k, path)| -> Result<()> {
        let png = plan.frame(*i, *k)?.encode_png()?;
        std::fs::write(path, png)?;
        Ok(())
    })?;
    let json = serde_json::to_string_pretty(&plan.manifest).map_err(|e| HdmapError::Io(e.to_string()))?;
    std::fs::write(dir.join("timing.json"), json + "\n")?;
    Ok(plan.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, x: f64, heading: f64) -> TrajectorySample {
        TrajectorySample {
            t,
            id: 1,
            class: AgentClass::Vehicle,
            x,
            y: 0.0,
            heading,
            speed: 10.0,
            length: 4.5,
            width: 1.8,
            height: 1.5,
            is_ego: true,
        }
    }

    #[test]
    fn resample_hits_grid_samples_exactly() {
        let s: Vec<TrajectorySample> = (0..=10).map(|k| sample(k as f64 / 10.0, k as f64, 0.0)).collect();
        let track: Vec<&TrajectorySample> = s.iter().collect();
        let p = resample_trajectory(&track, 24.0, 0.5, 1).unwrap();
        assert_eq!(p[0].x, 5.0);
    }

    #[test]
    fn resample_outside_range_errors() {
        let s = [sample(0.0, 0.0, 0.0), sample(0.1, 1.0, 0.0)];
        let track: Vec<&TrajectorySample> = s.iter().collect();
        assert!(matches!(resample_trajectory(&track, 24.0, 0.0, 5), Err(HdmapError::OutOfWindow { .. })));
    }

    #[test]
    fn anchor_prefers_activation_minus_pre_roll() {
        let t = RenderTiming::default();
        let (a, src) = choose_anchor(&t, Some(10.0), 0.0, 60.0).unwrap();
        assert_eq!((a, src), (8.0, AnchorSource::Activation));
        let (a, src) = choose_anchor(&t, None, 3.0, 60.0).unwrap();
        assert_eq!((a, src), (3.0, AnchorSource::EpisodeStart));
        let (a, _) = choose_anchor(&t, Some(59.0), 0.0, 60.0).unwrap();
        assert!((a + t.front_span_s() - 60.0).abs() < 1e-9);
        assert!(matches!(choose_anchor(&t, None, 0.0, 4.0), Err(HdmapError::WindowTooLong { .. })));
    }
}
