mod common;

use std::collections::BTreeSet;

use common::{assert_schema, workspace_root};
use proptest::prelude::*;
use scenforge_core::adversity::{Activation, AdversityLog, StaticRecord, WeatherTag};
use scenforge_core::class::AgentClass;
use scenforge_core::pipeline::{describe_scenario, sub_seed, PipelineConfig, PipelineError, NOMINAL};
use scenforge_core::sim::{TrajectorySample, TrajectorySet};

fn sample(id: u32, t: f64, x: f64, y: f64, is_ego: bool) -> TrajectorySample {
    TrajectorySample {
        t,
        id,
        class: AgentClass::Vehicle,
        x,
        y,
        heading: 0.0,
        speed: 8.0,
        length: 4.5,
        width: 1.8,
        height: 1.5,
        is_ego,
    }
}

/// Ego at the origin facing +x with one other vehicle at `(x, y)`.
fn scene(x: f64, y: f64) -> TrajectorySet {
    TrajectorySet { ego_id: Some(1), samples: vec![sample(1, 3.0, 0.0, 0.0, true), sample(7, 3.0, x, y, false)] }
}

fn activation(behavior: &str) -> Activation {
    Activation { t: 3.0, spec_id: format!("{behavior}_spec"), agent: 7, behavior: behavior.into(), end_t: Some(5.0) }
}

fn log_with(behaviors: &[&str]) -> AdversityLog {
    AdversityLog { activations: behaviors.iter().map(|b| activation(b)).collect(), ..Default::default() }
}

#[test]
fn empty_log_is_nominal() {
    assert_eq!(describe_scenario(&AdversityLog::default(), &scene(10.0, 0.0), &[]), NOMINAL);
    assert_eq!(NOMINAL, "Nominal traffic, no adversities.");
}

#[test]
fn red_light_from_the_left() {
    let text = describe_scenario(&log_with(&["run_red_light"]), &scene(0.0, 15.0), &[]);
    assert_eq!(text, "A vehicle from the left runs the red light and cuts across in front of the ego vehicle.");
}

#[test]
fn zigzag_mentions_the_manner() {
    let text = describe_scenario(&log_with(&["zigzag_drift"]), &scene(12.0, -3.0), &[]);
    assert!(text.contains("zigzag manner"), "{text}");
}

#[test]
fn repeated_kinds_are_described_once_then_statics_and_weather() {
    let mut log = log_with(&["fail_to_yield", "fail_to_yield"]);
    log.static_applied.push(StaticRecord { spec_id: "works".into(), behavior: "construction_zone".into() });
    let text = describe_scenario(&log, &scene(10.0, 10.0), &[WeatherTag::Snow]);
    assert_eq!(text.matches("fails to yield").count(), 1);
    assert!(text.contains("front left"), "{text}");
    let cones = text.find("traffic cones").unwrap();
    let snow = text.find("snowfall").unwrap();
    assert!(cones < snow);
}

#[test]
fn sub_seeds_are_stable_and_decorrelated() {
    assert_eq!(sub_seed(42, "demand"), sub_seed(42, "demand"));
    assert_ne!(sub_seed(42, "demand"), sub_seed(42, "simulate"));
    assert_ne!(sub_seed(42, "demand"), sub_seed(43, "demand"));
}

#[test]
fn bundled_config_matches_schema_and_validates() {
    let path = workspace_root().join("configs/ann_arbor.json");
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_schema("pipeline.schema.json", &doc);
    let c = PipelineConfig::load(&path).unwrap();
    assert_eq!(c.seed, 42);
    assert!((c.location.coordinate.lat - 42.31674).abs() < 1e-12);
    assert!((c.location.coordinate.lon + 83.7077).abs() < 1e-12);
    c.validate(true).unwrap();
    let round = serde_json::to_value(&c).unwrap();
    assert_schema("pipeline.schema.json", &round);
}

#[test]
fn minimal_config_needs_only_location_and_seed() {
    let c = PipelineConfig::from_json(r#"{"location": {"coordinate": {"lat": 1.0, "lon": 2.0}}, "seed": 5}"#).unwrap();
    assert_eq!(c.retrieval.radius_m, 300.0);
    assert!(c.adversities.is_empty());
    let no_seed = PipelineConfig::from_json(r#"{"location": {"coordinate": {"lat": 1.0, "lon": 2.0}}}"#);
    assert!(matches!(no_seed, Err(PipelineError::Config(_))));
    let unknown = PipelineConfig::from_json(r#"{"location": {"coordinate": {"lat": 1.0, "lon": 2.0}}, "seed": 5, "colour": 1}"#);
    assert!(unknown.is_err());
}

#[test]
fn offline_validation_demands_local_inputs() {
    let c = PipelineConfig::from_json(r#"{"location": {"coordinate": {"lat": 1.0, "lon": 2.0}}, "seed": 5}"#).unwrap();
    let e = c.validate(true).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("osm_file"));
    let mut bad = PipelineConfig::load(&workspace_root().join("configs/ann_arbor.json")).unwrap();
    bad.retrieval.radius_m = 0.0;
    assert!(bad.validate(true).is_err());
    let mut dup = PipelineConfig::load(&workspace_root().join("configs/ann_arbor.json")).unwrap();
    dup.adversities.push(dup.adversities[0].clone());
    assert!(dup.validate(true).unwrap_err().to_string().contains("unique"));
}

proptest! {
    #[test]
    fn stage_seeds_differ(master in any::<u64>()) {
        let stages = ["fetch-map", "convert", "demand", "simulate", "render", "prompt"];
        let seeds: BTreeSet<u64> = stages.iter().map(|s| sub_seed(master, s)).collect();
        prop_assert_eq!(seeds.len(), stages.len());
    }
}
