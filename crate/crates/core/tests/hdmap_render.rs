mod common;

use common::{assert_schema, roundabout_network, workspace_root};
use proptest::prelude::*;
use scenforge_core::class::AgentClass;
use scenforge_core::geom::Vec2;
use scenforge_core::hdmap::{
    back_project, clip_segment_near, intrinsics_from_fov, project, render_frame, render_views, resample_trajectory,
    world_to_camera, BoxKind, CameraModel, CameraPose, CameraSpec, EgoPose, ElementKind, Frame, HdmapError,
    MapElements, Palette, RenderPlan, RenderTiming, Rig, SceneBox, SceneInputs, ViewName,
};
use scenforge_core::sim::TrajectorySample;

const ORIGIN: EgoPose = EgoPose { x: 0.0, y: 0.0, heading: 0.0 };

fn front(width: u32, height: u32) -> CameraSpec {
    Rig::default().camera(ViewName::F).with_size(width, height)
}

fn sample(id: u32, t: f64, x: f64, y: f64, heading: f64, is_ego: bool) -> TrajectorySample {
    TrajectorySample {
        t,
        id,
        class: AgentClass::Vehicle,
        x,
        y,
        heading,
        speed: 10.0,
        length: 4.5,
        width: 1.8,
        height: 1.5,
        is_ego,
    }
}

/// Straight 10 m/s drive along +x from t = 0 to `end` at 10 Hz, plus a slower leader.
fn straight_episode(end: f64) -> Vec<TrajectorySample> {
    let steps = (end * 10.0).round() as u64;
    let mut v = Vec::new();
    for k in 0..=steps {
        let t = k as f64 / 10.0;
        v.push(sample(1, t, 10.0 * t, 0.0, 0.0, true));
        v.push(sample(2, t, 25.0 + 8.0 * t, 0.0, 0.0, false));
    }
    v
}

#[test]
fn intrinsics_examples() {
    let k = intrinsics_from_fov(120.0, 1280, 704).unwrap();
    assert!((k.fx - 369.504).abs() < 5e-4, "{}", k.fx);
    assert_eq!((k.cx, k.cy), (640.0, 352.0));
    assert_eq!(k.fx, k.fy);
    let k = intrinsics_from_fov(30.0, 1024, 576).unwrap();
    assert!((k.fx - 1910.81).abs() < 5e-3, "{}", k.fx);
    let k = intrinsics_from_fov(90.0, 2, 2).unwrap();
    assert!((k.fx - 1.0).abs() < 1e-12);
    for bad in [0.0, 179.0, -5.0, f64::NAN] {
        assert!(matches!(intrinsics_from_fov(bad, 10, 10), Err(HdmapError::Domain(_))));
    }
}

#[test]
fn pinhole_example_point() {
    let k = intrinsics_from_fov(120.0, 1280, 704).unwrap();
    let (u, v) = project(&k, [-2.0, 1.0, 10.0]).unwrap();
    let fx = 640.0 / 60f64.to_radians().tan();
    assert!((u - (640.0 - fx * 0.2)).abs() < 1e-9);
    assert!((u - 566.10).abs() < 5e-3 && (v - 388.95).abs() < 5e-3, "{u} {v}");
    assert_eq!(project(&k, [0.0, 0.0, 7.0]), Some((640.0, 352.0)));
    let (u_edge, _) = project(&k, [60f64.to_radians().tan() * 5.0, 0.0, 5.0]).unwrap();
    assert!((u_edge - 1280.0).abs() < 1e-9);
    assert_eq!(project(&k, [0.0, 0.0, 0.05]), None);
}

#[test]
fn camera_frame_composition() {
    let f = front(1280, 704);
    let pc = world_to_camera(ORIGIN, &f, [11.7, 0.0, 0.0]);
    assert!(pc[0].abs() < 1e-12 && (pc[1] - 1.6).abs() < 1e-12 && (pc[2] - 10.0).abs() < 1e-12);
    let at_ego = world_to_camera(ORIGIN, &f, [0.0, 0.0, 1.6]);
    assert!((at_ego[2] + 1.7).abs() < 1e-12);
    let r = Rig::default().camera(ViewName::R).clone();
    let behind = world_to_camera(ORIGIN, &r, [-11.0, 0.0, 1.6]);
    assert!(behind[0].abs() < 1e-12 && behind[1].abs() < 1e-12 && (behind[2] - 10.0).abs() < 1e-12);
}

#[test]
fn near_plane_clipping() {
    let a = [0.0, 0.0, -1.0];
    let b = [2.0, 4.0, 1.0];
    let (p, q) = clip_segment_near(a, b, 0.1).unwrap();
    let t = (0.1 - (-1.0)) / 2.0;
    assert!((t - 0.55f64).abs() < 1e-15);
    assert!((p[0] - 2.0 * t).abs() < 1e-12 && (p[1] - 4.0 * t).abs() < 1e-12 && p[2] == 0.1);
    assert_eq!(q, b);
    assert_eq!(clip_segment_near([0.0, 0.0, 1.0], [1.0, 1.0, 2.0], 0.1), Some(([0.0, 0.0, 1.0], [1.0, 1.0, 2.0])));
    assert_eq!(clip_segment_near([0.0, 0.0, -1.0], [1.0, 1.0, -2.0], 0.1), None);
}

#[test]
fn resampling_rules() {
    let s = [sample(1, 0.0, 0.0, 0.0, 0.0, true), sample(1, 0.1, 1.0, 0.0, 0.0, true)];
    let track: Vec<&TrajectorySample> = s.iter().collect();
    let p = resample_trajectory(&track, 24.0, 0.0, 3).unwrap();
    assert!((p[1].x - 10.0 / 24.0).abs() < 1e-12);
    assert!((p[1].x - 0.41667).abs() < 5e-6);
    assert_eq!(p[0].x, 0.0);

    let h = [
        sample(1, 0.0, 0.0, 0.0, 350f64.to_radians(), true),
        sample(1, 0.1, 0.0, 0.0, 10f64.to_radians(), true),
    ];
    let track: Vec<&TrajectorySample> = h.iter().collect();
    let mid = resample_trajectory(&track, 20.0, 0.0, 2).unwrap()[1];
    assert!(mid.heading.abs() < 1e-12, "{}", mid.heading.to_degrees());

    assert!(matches!(resample_trajectory(&track, 24.0, 0.05, 3), Err(HdmapError::OutOfWindow { .. })));
}

#[test]
fn empty_scene_is_black() {
    let m = CameraModel::new(ORIGIN, &front(320, 176)).unwrap();
    let f = render_frame(&MapElements::default(), &[], &m, &Palette::default());
    assert!(f.is_black());
}

#[test]
fn lane_line_on_axis_reaches_bottom_centre() {
    let map = MapElements { polylines: vec![(ElementKind::LaneLine, vec![Vec2::new(0.0, 0.0), Vec2::new(500.0, 0.0)])] };
    let m = CameraModel::new(ORIGIN, &front(1280, 704)).unwrap();
    let f = render_frame(&map, &[], &m, &Palette::default());
    assert_eq!(f.pixel(640, 703), [255, 255, 255]);
    // The far end converges toward the principal point.
    let v_far = 352.0 + m.intrinsics.fy * 1.6 / (500.0 - 1.7);
    assert_eq!(f.pixel(640, v_far.floor() as u32 + 1), [255, 255, 255]);
    assert_eq!(f.pixel(640, 340), [0, 0, 0]);
}

#[test]
fn vehicle_front_face_width_matches_pinhole() {
    let m = CameraModel::new(ORIGIN, &front(1280, 704)).unwrap();
    // Rear face 10 m in front of the camera.
    let b = SceneBox {
        kind: BoxKind::Agent(AgentClass::Vehicle),
        x: 1.7 + 10.0 + 2.25,
        y: 0.0,
        heading: 0.0,
        length: 4.5,
        width: 1.8,
        height: 1.5,
    };
    let f = render_frame(&MapElements::default(), &[b], &m, &Palette::default());
    let row = 352 + 30;
    let green: Vec<u32> = (0..1280).filter(|&x| f.pixel(x, row) == [0, 255, 0]).collect();
    let span = (green.last().unwrap() - green.first().unwrap()) as f64;
    let expected = m.intrinsics.fx * 1.8 / 10.0;
    assert!((expected - 66.5).abs() < 0.05);
    assert!((span - expected).abs() <= 2.0, "span {span} expected {expected}");
}

#[test]
fn cuboid_behind_camera_draws_nothing() {
    let m = CameraModel::new(ORIGIN, &front(640, 352)).unwrap();
    let b = SceneBox { kind: BoxKind::Cone, x: -10.0, y: 0.5, heading: 0.3, length: 0.4, width: 0.4, height: 0.7 };
    assert!(render_frame(&MapElements::default(), &[b], &m, &Palette::default()).is_black());
}

#[test]
fn shipped_rig_matches_table() {
    let text = std::fs::read_to_string(workspace_root().join("configs/rig.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_schema("rig.schema.json", &doc);
    let rig: Rig = serde_json::from_value(doc).unwrap();
    assert_eq!(rig, Rig::default());
    let headings: Vec<f64> = rig.cameras.iter().map(|c| c.heading_deg).collect();
    let fovs: Vec<f64> = rig.cameras.iter().map(|c| c.fov_h_deg).collect();
    assert_eq!(headings, [0.0, -66.0, 66.0, 180.0, -152.0, 152.0]);
    assert_eq!(fovs, [120.0, 120.0, 120.0, 30.0, 70.0, 70.0]);
}

#[test]
fn frames_use_only_palette_colours() {
    let n = roundabout_network();
    let samples = straight_episode(8.0);
    let scene = SceneInputs { samples: &samples, ego_id: Some(1), cones: &[], first_activation: None };
    let timing = RenderTiming { front_width: 320, front_height: 176, multiview_width: 256, multiview_height: 144, ..Default::default() };
    let palette = Palette::default();
    let plan = RenderPlan::new(MapElements::from_network(&n), &scene, &Rig::default(), &timing, &palette).unwrap();
    let allowed = palette.colors();
    let mut seen_map = false;
    for seq in 0..7 {
        for k in [0, 30, 56] {
            let f = plan.frame(seq, k).unwrap();
            for px in f.data.chunks(3) {
                assert!(allowed.contains(&[px[0], px[1], px[2]]), "{px:?}");
            }
            seen_map |= !f.is_black();
        }
    }
    assert!(seen_map);
}

#[test]
fn render_views_writes_contract_layout() {
    let n = roundabout_network();
    let samples = straight_episode(12.0);
    let scene = SceneInputs { samples: &samples, ego_id: Some(1), cones: &[], first_activation: Some(6.0) };
    let timing = RenderTiming { front_width: 128, front_height: 70, multiview_width: 96, multiview_height: 54, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let m = render_views(dir.path(), &n, &scene, &Rig::default(), &timing, &Palette::default()).unwrap();
    assert_eq!(m.anchor_s, 4.0);
    assert!((m.front.end_s - 9.0).abs() < 1e-12);
    assert_eq!(m.total_multiview_frames(), 342);
    let count = |d: &std::path::Path| std::fs::read_dir(d).unwrap().count();
    assert_eq!(count(&dir.path().join("front")), 120);
    for v in ViewName::ALL {
        assert_eq!(count(&dir.path().join("multiview").join(v.dir())), 57);
    }
    let png = std::fs::read(dir.path().join("front/000119.png")).unwrap();
    let f = Frame::decode_png(&png).unwrap();
    assert_eq!((f.width, f.height), (128, 70));
    let timing_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("timing.json")).unwrap()).unwrap();
    assert_eq!(timing_json["fps"], 24.0);
}

#[test]
fn rendering_is_byte_stable() {
    let n = roundabout_network();
    let samples = straight_episode(8.0);
    let scene = SceneInputs { samples: &samples, ego_id: Some(1), cones: &[], first_activation: None };
    let timing = RenderTiming { front_width: 320, front_height: 176, ..Default::default() };
    let render = || {
        let plan = RenderPlan::new(MapElements::from_network(&n), &scene, &Rig::default(), &timing, &Palette::default()).unwrap();
        plan.frame(0, 60).unwrap().encode_png().unwrap()
    };
    assert_eq!(render(), render());
}

#[test]
fn short_episode_is_rejected() {
    let samples = straight_episode(3.0);
    let scene = SceneInputs { samples: &samples, ego_id: Some(1), cones: &[], first_activation: None };
    let r = RenderPlan::new(MapElements::default(), &scene, &Rig::default(), &RenderTiming::default(), &Palette::default());
    assert!(matches!(r, Err(HdmapError::WindowTooLong { .. })));
}

proptest! {
    #[test]
    fn fov_round_trips(view in 0usize..6, w in 16u32..4096) {
        let spec = &Rig::default().cameras[view];
        let k = intrinsics_from_fov(spec.fov_h_deg, w, 64).unwrap();
        let fov = 2.0 * (w as f64 / (2.0 * k.fx)).atan();
        prop_assert!((fov.to_degrees() - spec.fov_h_deg).abs() < 1e-9);
    }

    #[test]
    fn projection_is_scale_invariant(x in -50.0f64..50.0, y in -50.0f64..50.0, z in 0.2f64..100.0, s in 0.5f64..20.0) {
        let k = intrinsics_from_fov(120.0, 1280, 704).unwrap();
        let (u1, v1) = project(&k, [x, y, z]).unwrap();
        let (u2, v2) = project(&k, [x * s, y * s, z * s]).unwrap();
        prop_assert!((u1 - u2).abs() < 1e-9 * u1.abs().max(1.0));
        prop_assert!((v1 - v2).abs() < 1e-9 * v1.abs().max(1.0));
    }

    #[test]
    fn front_and_front_left_bearings_differ_by_offset(bearing_deg in -25.0f64..55.0, range in 2.0f64..80.0, h in -3.0f64..3.0) {
        // Both cameras share the front mount, so a shared bearing origin exists.
        let rig = Rig::default();
        let b = bearing_deg.to_radians();
        let ego = EgoPose { x: 5.0, y: -3.0, heading: h };
        let mount = Vec2::new(1.7 * h.cos(), 1.7 * h.sin());
        let dir = Vec2::from_heading(h + b);
        let p = [ego.x + mount.x + dir.x * range, ego.y + mount.y + dir.y * range, 1.6];
        let bearing = |v: ViewName| {
            let pc = world_to_camera(ego, rig.camera(v), p);
            pc[0].atan2(pc[2])
        };
        let diff = bearing(ViewName::FL) - bearing(ViewName::F);
        prop_assert!((diff - 66f64.to_radians()).abs() < 1e-6);
    }

    #[test]
    fn back_ray_reprojects(view in 0usize..6, x in -200.0f64..200.0, y in -200.0f64..200.0, z in 0.0f64..5.0, h in -3.2f64..3.2) {
        let spec = &Rig::default().cameras[view];
        let ego = EgoPose { x: 1.0, y: 2.0, heading: h };
        let pose = CameraPose::new(ego, spec);
        let k = intrinsics_from_fov(spec.fov_h_deg, spec.width, spec.height).unwrap();
        let pc = pose.to_camera([x, y, z]);
        if let Some((u, v)) = project(&k, pc) {
            let back = pose.to_world(back_project(&k, u, v, pc[2]));
            let (u2, v2) = project(&k, pose.to_camera(back)).unwrap();
            prop_assert!((u - u2).abs() < 1e-6 && (v - v2).abs() < 1e-6);
        }
    }
}
