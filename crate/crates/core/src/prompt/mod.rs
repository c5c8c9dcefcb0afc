//! Per-view text prompts built from street-level imagery at the scenario location.

mod client;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversity::WeatherTag;
use crate::geo::GeoPoint;
use crate::hdmap::{Rig, ViewName};

pub use client::{CachedImageSource, FixtureVlmClient, HttpImageSource, HttpVlmClient, ImageSource, VlmClient};

/// Largest field of view the imagery provider serves.
pub const PROVIDER_MAX_FOV_DEG: f64 = 120.0;

/// Words naming traffic participants. Prompts describe the static scene only.
pub const BLOCKLIST: [&str; 6] = ["car", "vehicle", "pedestrian", "cyclist", "truck", "bus"];

pub const DEFAULT_STYLE_PREFIX: &str = "Photorealistic driving video from a roof-mounted camera";

pub const INSTRUCTION: &str = "Describe the static environment in this street-level image: road layout, \
infrastructure, buildings and vegetation. Do not mention vehicles, people or any other road users.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{view}: {message}")]
    Client { view: String, message: String },
    #[error("{view}: description is empty after filtering")]
    EmptyDescription { view: String },
}

pub type Result<T> = std::result::Result<T, PromptError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreetViewRequest {
    pub view: ViewName,
    pub lat: f64,
    pub lon: f64,
    /// Compass degrees in [0, 360).
    pub heading: f64,
    pub fov: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub view: ViewName,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPrompt {
    pub request: StreetViewRequest,
    pub description: String,
    pub prompt: String,
}

/// Contents of `prompts/prompts.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub base_heading_deg: f64,
    pub weather: Vec<WeatherTag>,
    pub statics: Vec<String>,
    /// Keyed by view directory name.
    pub views: BTreeMap<String, ViewPrompt>,
}

pub fn normalize_deg(d: f64) -> f64 {
    let r = d.rem_euclid(360.0);
    if r >= 360.0 - 1e-9 {
        0.0
    } else {
        r
    }
}

/// Compass bearing (clockwise from north) of a local-frame heading (radians counter-clockwise from east).
pub fn compass_from_heading(heading_rad: f64) -> f64 {
    normalize_deg(90.0 - heading_rad.to_degrees())
}

pub fn build_requests(coord: GeoPoint, base_heading: f64, rig: &Rig) -> Result<Vec<StreetViewRequest>> {
    if !(0.0..360.0).contains(&base_heading) {
        return Err(PromptError::Domain(format!("base heading {base_heading} outside [0, 360)")));
    }
    coord.validate().map_err(|e| PromptError::Domain(e.to_string()))?;
    rig.validate().map_err(|e| PromptError::Domain(e.to_string()))?;
    Ok(ViewName::ALL
        .iter()
        .map(|&v| {
            let c = rig.camera(v);
            StreetViewRequest {
                view: v,
                lat: coord.lat,
                lon: coord.lon,
                heading: normalize_deg(base_heading + c.heading_deg),
                fov: c.fov_h_deg.min(PROVIDER_MAX_FOV_DEG),
                width: 640,
                height: 640,
            }
        })
        .collect())
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
}

/// True when any word is a blocklist term or its plural.
pub fn contains_blocked_term(text: &str) -> bool {
    words(text).any(|w| {
        BLOCKLIST.iter().any(|t| {
            w == *t || w.strip_suffix('s').is_some_and(|s| s == *t) || w.strip_suffix("es").is_some_and(|s| s == *t)
        })
    })
}

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(pos, c)) in chars.iter().enumerate() {
        let at_break = matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|&(_, n)| n.is_whitespace());
        if at_break {
            out.push(text[start..pos + c.len_utf8()].trim());
            start = pos + c.len_utf8();
        }
    }
    out.push(text[start..].trim());
    out.retain(|s| !s.is_empty());
    out
}

/// Drop every sentence that names a traffic participant.
pub fn filter_description(text: &str) -> String {
    sentences(text).into_iter().filter(|s| !contains_blocked_term(s)).collect::<Vec<_>>().join(" ")
}

pub fn describe(image: &[u8], view: ViewName, client: &dyn VlmClient) -> Result<SceneDescription> {
    if image.is_empty() {
        return Err(PromptError::Domain(format!("{}: empty image", view.dir())));
    }
    let raw = client
        .complete(INSTRUCTION, image, view)
        .map_err(|message| PromptError::Client { view: view.dir().into(), message })?;
    let text = filter_description(&raw);
    if text.is_empty() {
        return Err(PromptError::EmptyDescription { view: view.dir().into() });
    }
    Ok(SceneDescription { view, text })
}

pub fn weather_clause(tag: WeatherTag) -> &'static str {
    match tag {
        WeatherTag::Rain => "heavy rain, wet reflective road surface",
        WeatherTag::Snow => "falling snow, snow-covered roadside",
        WeatherTag::Fog => "dense fog, reduced visibility",
        WeatherTag::Night => "night, dark sky and artificial street lighting",
    }
}

/// Clause for a static adversity kind, if it changes the scene's look.
pub fn static_clause(kind: &str) -> Option<&'static str> {
    match kind {
        "construction_zone" => Some("The road has roadwork with traffic cones"),
        _ => None,
    }
}

fn sentence(s: &str) -> String {
    let t = s.trim().trim_end_matches(['.', '!', '?']).trim_end();
    format!("{t}.")
}

pub fn compose_prompt(style_prefix: &str, desc: &SceneDescription, weather: &[WeatherTag], statics: &[String]) -> String {
    let mut parts = vec![sentence(style_prefix), sentence(&desc.text)];
    if !weather.is_empty() {
        let w: Vec<&str> = weather.iter().map(|&t| weather_clause(t)).collect();
        parts.push(sentence(&format!("Weather: {}", w.join("; "))));
    }
    for c in statics.iter().filter_map(|s| static_clause(s)) {
        parts.push(sentence(c));
    }
    parts.join(" ")
}

/// Inputs that shape every prompt of a bundle.
pub struct PromptContext<'a> {
    pub coord: GeoPoint,
    pub base_heading_deg: f64,
    pub rig: &'a Rig,
    pub weather: &'a [WeatherTag],
    pub statics: &'a [String],
    pub style_prefix: &'a str,
}

/// Fetch, describe and compose all six views. Returns the bundle and the fetched images.
pub fn generate_prompts(
    ctx: &PromptContext,
    images: &dyn ImageSource,
    vlm: &dyn VlmClient,
) -> Result<(PromptBundle, Vec<(ViewName, Vec<u8>)>)> {
    let mut views = BTreeMap::new();
    let mut fetched = Vec::new();
    for req in build_requests(ctx.coord, ctx.base_heading_deg, ctx.rig)? {
        let img = images
            .fetch(&req)
            .map_err(|message| PromptError::Client { view: req.view.dir().into(), message })?;
        let desc = describe(&img, req.view, vlm)?;
        let prompt = compose_prompt(ctx.style_prefix, &desc, ctx.weather, ctx.statics);
        fetched.push((req.view, img));
        views.insert(req.view.dir().to_string(), ViewPrompt { request: req, description: desc.text, prompt });
    }
    let mut weather = ctx.weather.to_vec();
    weather.sort();
    weather.dedup();
    Ok((
        PromptBundle { base_heading_deg: ctx.base_heading_deg, weather, statics: ctx.statics.to_vec(), views },
        fetched,
    ))
}
