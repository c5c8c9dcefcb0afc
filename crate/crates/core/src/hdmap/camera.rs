use serde::{Deserialize, Serialize};

use super::{HdmapError, Result};

/// Near clipping plane, m.
pub const NEAR_PLANE_M: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewName {
    F,
    FL,
    FR,
    R,
    RL,
    RR,
}

impl ViewName {
    pub const ALL: [ViewName; 6] = [ViewName::F, ViewName::FL, ViewName::FR, ViewName::R, ViewName::RL, ViewName::RR];

    /// Directory name used in packages.
    pub fn dir(self) -> &'static str {
        match self {
            ViewName::F => "front",
            ViewName::FL => "front_left",
            ViewName::FR => "front_right",
            ViewName::R => "rear",
            ViewName::RL => "rear_left",
            ViewName::RR => "rear_right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub name: ViewName,
    /// Degrees relative to ego forward, clockwise positive.
    pub heading_deg: f64,
    pub fov_h_deg: f64,
    pub width: u32,
    pub height: u32,
    /// (forward, left, up) in metres from the ego ground centre.
    pub mount: [f64; 3],
    #[serde(default)]
    pub pitch_deg: f64,
}

impl CameraSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_h_deg > 0.0 && self.fov_h_deg < 179.0) {
            return Err(HdmapError::Domain(format!("{:?}: fov {} outside (0, 179)", self.name, self.fov_h_deg)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(HdmapError::Domain(format!("{:?}: empty image size", self.name)));
        }
        if !self.heading_deg.is_finite() || !self.pitch_deg.is_finite() || self.mount.iter().any(|m| !m.is_finite()) {
            return Err(HdmapError::Domain(format!("{:?}: non-finite pose", self.name)));
        }
        Ok(())
    }

    pub fn with_size(&self, width: u32, height: u32) -> CameraSpec {
        CameraSpec { width, height, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rig {
    pub cameras: Vec<CameraSpec>,
}

impl Default for Rig {
    fn default() -> Self {
        let front = [1.7, 0.0, 1.6];
        let rear = [-1.0, 0.0, 1.6];
        let cam = |name, heading_deg, fov_h_deg, mount| CameraSpec {
            name,
            heading_deg,
            fov_h_deg,
            width: 1024,
            height: 576,
            mount,
            pitch_deg: 0.0,
        };
        Rig {
            cameras: vec![
                cam(ViewName::F, 0.0, 120.0, front),
                cam(ViewName::FL, -66.0, 120.0, front),
                cam(ViewName::FR, 66.0, 120.0, front),
                cam(ViewName::R, 180.0, 30.0, rear),
                cam(ViewName::RL, -152.0, 70.0, rear),
                cam(ViewName::RR, 152.0, 70.0, rear),
            ],
        }
    }
}

impl Rig {
    pub fn validate(&self) -> Result<()> {
        for c in &self.cameras {
            c.validate()?;
        }
        for v in ViewName::ALL {
            let n = self.cameras.iter().filter(|c| c.name == v).count();
            if n != 1 {
                return Err(HdmapError::Domain(format!("rig needs exactly one {v:?} camera, found {n}")));
            }
        }
        Ok(())
    }

    pub fn camera(&self, v: ViewName) -> &CameraSpec {
        self.cameras.iter().find(|c| c.name == v).expect("validated rig has every view")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

pub fn intrinsics_from_fov(fov_h_deg: f64, width: u32, height: u32) -> Result<Intrinsics> {
    if !(fov_h_deg > 0.0 && fov_h_deg < 179.0) {
        return Err(HdmapError::Domain(format!("fov {fov_h_deg} outside (0, 179)")));
    }
    if width == 0 || height == 0 {
        return Err(HdmapError::Domain("empty image size".into()));
    }
    let f = (width as f64 / 2.0) / (fov_h_deg * std::f64::consts::PI / 360.0).tan();
    Ok(Intrinsics { fx: f, fy: f, cx: width as f64 / 2.0, cy: height as f64 / 2.0 })
}

/// Planar ego pose: position in the local frame and heading in radians counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Rigid world-to-camera transform. Camera axes: +x right, +y down, +z forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    origin: [f64; 3],
    /// Rows are the camera x, y, z axes expressed in world coordinates.
    rot: [[f64; 3]; 3],
}

impl CameraPose {
    pub fn new(ego: EgoPose, spec: &CameraSpec) -> Self {
        let (s, c) = ego.heading.sin_cos();
        let [mx, my, mz] = spec.mount;
        let origin = [ego.x + c * mx - s * my, ego.y + s * mx + c * my, mz];
        let yaw = ego.heading - spec.heading_deg.to_radians();
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = spec.pitch_deg.to_radians().sin_cos();
        let fwd = [cy, sy, 0.0];
        let right = [sy, -cy, 0.0];
        let up = [0.0, 0.0, 1.0];
        let z_axis = [fwd[0] * cp, fwd[1] * cp, sp];
        let y_axis = [-(up[0] * cp - fwd[0] * sp), -(up[1] * cp - fwd[1] * sp), -(up[2] * cp - fwd[2] * sp)];
        CameraPose { origin, rot: [right, y_axis, z_axis] }
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1], p[2] - self.origin[2]];
        let dot = |r: [f64; 3]| r[0] * d[0] + r[1] * d[1] + r[2] * d[2];
        [dot(self.rot[0]), dot(self.rot[1]), dot(self.rot[2])]
    }

    pub fn to_world(&self, pc: [f64; 3]) -> [f64; 3] {
        let mut w = self.origin;
        for (axis, k) in self.rot.iter().zip(pc) {
            for i in 0..3 {
                w[i] += axis[i] * k;
            }
        }
        w
    }
}

pub fn world_to_camera(ego: EgoPose, spec: &CameraSpec, p: [f64; 3]) -> [f64; 3] {
    CameraPose::new(ego, spec).to_camera(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub pose: CameraPose,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(ego: EgoPose, spec: &CameraSpec) -> Result<Self> {
        Ok(CameraModel {
            intrinsics: intrinsics_from_fov(spec.fov_h_deg, spec.width, spec.height)?,
            pose: CameraPose::new(ego, spec),
            width: spec.width,
            height: spec.height,
        })
    }
}

/// Pinhole projection; `None` behind the near plane. Pixels may fall outside the image.
pub fn project(k: &Intrinsics, pc: [f64; 3]) -> Option<(f64, f64)> {
    if pc[2] < NEAR_PLANE_M {
        return None;
    }
    Some((k.cx + k.fx * pc[0] / pc[2], k.cy + k.fy * pc[1] / pc[2]))
}

/// Camera-frame point at depth `z` on the ray through pixel `(u, v)`.
pub fn back_project(k: &Intrinsics, u: f64, v: f64, z: f64) -> [f64; 3] {
    [(u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z]
}

/// Clip a camera-frame segment against the plane z = near.
pub fn clip_segment_near(p1: [f64; 3], p2: [f64; 3], near: f64) -> Option<([f64; 3], [f64; 3])> {
    let in1 = p1[2] >= near;
    let in2 = p2[2] >= near;
    match (in1, in2) {
        (true, true) => Some((p1, p2)),
        (false, false) => None,
        _ => {
            let t = (near - p1[2]) / (p2[2] - p1[2]);
            let cut = [p1[0] + t * (p2[0] - p1[0]), p1[1] + t * (p2[1] - p1[1]), near];
            if in1 {
                Some((p1, cut))
            } else {
                Some((cut, p2))
            }
        }
    }
}
