use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use base64::Engine;

use super::StreetViewRequest;
use crate::hdmap::ViewName;

/// Supplies a street-level image for a request.
pub trait ImageSource: Send + Sync {
    fn fetch(&self, req: &StreetViewRequest) -> Result<Vec<u8>, String>;
}

/// Vision-language model turning an image into text.
pub trait VlmClient: Send + Sync {
    fn complete(&self, instruction: &str, image: &[u8], view: ViewName) -> Result<String, String>;
}

impl<F> VlmClient for F
where
    F: Fn(&str, &[u8], ViewName) -> Result<String, String> + Send + Sync,
{
    fn complete(&self, instruction: &str, image: &[u8], view: ViewName) -> Result<String, String> {
        self(instruction, image, view)
    }
}

/// Images stored as `<dir>/<view>.png` or `<dir>/<view>.jpg`.
pub struct CachedImageSource {
    pub dir: PathBuf,
}

impl ImageSource for CachedImageSource {
    fn fetch(&self, req: &StreetViewRequest) -> Result<Vec<u8>, String> {
        for ext in ["png", "jpg"] {
            let p = self.dir.join(format!("{}.{ext}", req.view.dir()));
            if p.exists() {
                return std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
            }
        }
        Err(format!("no cached image for {} in {}", req.view.dir(), self.dir.display()))
    }
}

/// Street-view imagery over HTTP, configured from `TSW_STREETVIEW_URL` and `TSW_STREETVIEW_KEY`.
pub struct HttpImageSource {
    pub url: String,
    pub key: Option<String>,
    pub timeout: Duration,
}

impl HttpImageSource {
    pub fn from_env() -> Result<Self, String> {
        let url = std::env::var("TSW_STREETVIEW_URL").map_err(|_| "TSW_STREETVIEW_URL is not set".to_string())?;
        Ok(HttpImageSource { url, key: std::env::var("TSW_STREETVIEW_KEY").ok(), timeout: Duration::from_secs(30) })
    }
}

impl ImageSource for HttpImageSource {
    fn fetch(&self, req: &StreetViewRequest) -> Result<Vec<u8>, String> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut r = agent
            .get(&self.url)
            .query("size", &format!("{}x{}", req.width, req.height))
            .query("location", &format!("{:.7},{:.7}", req.lat, req.lon))
            .query("heading", &format!("{:.3}", req.heading))
            .query("fov", &format!("{:.3}", req.fov));
        if let Some(k) = &self.key {
            r = r.query("key", k);
        }
        let resp = r.call().map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut resp.into_reader(), &mut bytes).map_err(|e| e.to_string())?;
        Ok(bytes)
    }
}

/// Recorded responses keyed by view directory name, with an optional `default` entry.
pub struct FixtureVlmClient {
    pub responses: BTreeMap<String, String>,
}

impl FixtureVlmClient {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let responses = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(FixtureVlmClient { responses })
    }
}

impl VlmClient for FixtureVlmClient {
    fn complete(&self, _instruction: &str, _image: &[u8], view: ViewName) -> Result<String, String> {
        self.responses
            .get(view.dir())
            .or_else(|| self.responses.get("default"))
            .cloned()
            .ok_or_else(|| format!("no recorded response for {}", view.dir()))
    }
}

/// JSON-over-HTTP model endpoint, configured from `TSW_VLM_URL` and `TSW_VLM_KEY`.
/// Sends `{instruction, view, image_base64}` and expects `{text}` back.
pub struct HttpVlmClient {
    pub url: String,
    pub key: Option<String>,
    pub timeout: Duration,
}

impl HttpVlmClient {
    pub fn from_env() -> Result<Self, String> {
        let url = std::env::var("TSW_VLM_URL").map_err(|_| "TSW_VLM_URL is not set".to_string())?;
        Ok(HttpVlmClient { url, key: std::env::var("TSW_VLM_KEY").ok(), timeout: Duration::from_secs(60) })
    }
}

impl VlmClient for HttpVlmClient {
    fn complete(&self, instruction: &str, image: &[u8], view: ViewName) -> Result<String, String> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut r = agent.post(&self.url);
        if let Some(k) = &self.key {
            r = r.set("Authorization", &format!("Bearer {k}"));
        }
        let body = serde_json::json!({
            "instruction": instruction,
            "view": view.dir(),
            "image_base64": base64::engine::general_purpose::STANDARD.encode(image),
        });
        let resp: serde_json::Value = r.send_json(body).map_err(|e| e.to_string())?.into_json().map_err(|e| e.to_string())?;
        resp.get("text").and_then(|t| t.as_str()).map(str::to_string).ok_or_else(|| "response has no \"text\"".into())
    }
}
