use crate::adversity::{AdversityLog, Sector, WeatherTag};
use crate::geom::{wrap_angle, Vec2};
use crate::sim::{TrajectorySample, TrajectorySet};

pub const NOMINAL: &str = "Nominal traffic, no adversities.";

fn sector_words(s: Sector) -> &'static str {
    match s {
        Sector::Front => "front",
        Sector::FrontLeft => "front left",
        Sector::Left => "left",
        Sector::RearLeft => "rear left",
        Sector::Rear => "rear",
        Sector::RearRight => "rear right",
        Sector::Right => "right",
        Sector::FrontRight => "front right",
    }
}

fn sample_at(traj: &TrajectorySet, id: u32, t: f64) -> Option<&TrajectorySample> {
    traj.samples.iter().find(|s| s.id == id && (s.t - t).abs() < 1e-6)
}

/// Side of the ego the agent is on at time `t`.
pub fn bearing_word(traj: &TrajectorySet, agent: u32, t: f64) -> Option<&'static str> {
    let ego = sample_at(traj, traj.ego_id?, t)?;
    let a = sample_at(traj, agent, t)?;
    let rel = Vec2::new(a.x - ego.x, a.y - ego.y);
    Some(sector_words(Sector::of_bearing(wrap_angle(rel.heading() - ego.heading))))
}

fn sentence_for(kind: &str, bearing: &str) -> String {
    match kind {
        "cut_in" => format!("A vehicle from the {bearing} cuts in sharply in front of the ego vehicle."),
        "hard_brake" => "The vehicle ahead of the ego vehicle brakes hard without warning.".into(),
        "fail_to_yield" => format!("A vehicle from the {bearing} fails to yield and enters the path of the ego vehicle."),
        "run_red_light" => format!("A vehicle from the {bearing} runs the red light and cuts across in front of the ego vehicle."),
        "pedestrian_dash" => format!("A pedestrian from the {bearing} dashes across the road in front of the ego vehicle."),
        "cyclist_blind_spot" => format!("A cyclist lingers in the ego vehicle's blind spot on the {bearing}."),
        "zigzag_drift" => format!("A vehicle on the {bearing} drifts across lane markings in a zigzag manner."),
        other => format!("A {} event involves the ego vehicle.", other.replace('_', " ")),
    }
}

fn weather_sentence(tag: WeatherTag) -> &'static str {
    match tag {
        WeatherTag::Rain => "The scene takes place in heavy rain.",
        WeatherTag::Snow => "The scene takes place in snowfall.",
        WeatherTag::Fog => "The scene takes place in dense fog.",
        WeatherTag::Night => "The scene takes place at night.",
    }
}

/// One sentence per activated behavior kind in order of first activation, then one per static effect.
pub fn describe_scenario(log: &AdversityLog, traj: &TrajectorySet, weather: &[WeatherTag]) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    let mut acts: Vec<_> = log.activations.iter().collect();
    acts.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.agent.cmp(&b.agent)));
    for a in acts {
        if seen.contains(&a.behavior.as_str()) {
            continue;
        }
        seen.push(&a.behavior);
        let b = bearing_word(traj, a.agent, a.t).unwrap_or("side");
        out.push(sentence_for(&a.behavior, b));
    }
    if log.static_applied.iter().any(|s| s.behavior == "construction_zone") {
        out.push("Roadwork with traffic cones closes part of the road.".into());
    }
    let mut w = weather.to_vec();
    w.sort();
    w.dedup();
    out.extend(w.into_iter().map(|t| weather_sentence(t).to_string()));
    if out.is_empty() {
        return NOMINAL.into();
    }
    out.join(" ")
}
