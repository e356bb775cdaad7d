//! Client for a Face++-style detect endpoint: multipart upload, JSON reply
//! with `faces[].attributes.gender.value`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use image::RgbImage;
use serde::Deserialize;

use super::client::{encode_png, ClientKind, FaceAnalysisClient, FaceAnalysisResult};
use crate::dataset::Attribute;
use crate::error::{Error, Result};

pub const URL_VAR: &str = "FACE_API_URL";
pub const KEY_VAR: &str = "FACE_API_KEY";
pub const SECRET_VAR: &str = "FACE_API_SECRET";

#[derive(Clone, Debug)]
pub struct RemoteConfig {
    pub url: String,
    pub api_key: String,
    pub api_secret: Option<String>,
    pub timeout: Duration,
    /// Requests per second; 0 disables throttling.
    pub rate_limit: f64,
    pub attempts: u32,
    pub backoff: Duration,
}

impl RemoteConfig {
    /// Reads `FACE_API_URL`, `FACE_API_KEY` and optionally `FACE_API_SECRET`.
    pub fn from_env(timeout: Duration, rate_limit: f64) -> Result<Self> {
        let var = |k: &str| std::env::var(k).map_err(|_| Error::Config(format!("{k} is not set")));
        Ok(Self {
            url: var(URL_VAR)?,
            api_key: var(KEY_VAR)?,
            api_secret: std::env::var(SECRET_VAR).ok(),
            timeout,
            rate_limit,
            attempts: 3,
            backoff: Duration::from_millis(500),
        })
    }
}

pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
    last_request: Mutex<Option<Instant>>,
    requests: AtomicUsize,
}

#[derive(Deserialize)]
struct DetectResponse {
    #[serde(default)]
    faces: Vec<Face>,
    #[serde(default)]
    error_message: Option<String>,
}

#[derive(Deserialize)]
struct Face {
    #[serde(default)]
    attributes: Option<Attributes>,
}

#[derive(Deserialize)]
struct Attributes {
    gender: Option<Gender>,
}

#[derive(Deserialize)]
struct Gender {
    value: String,
}

/// Maps a detect response body to a result. `Male` is attribute A and
/// `Female` attribute B.
pub fn parse_response(body: &str) -> Result<FaceAnalysisResult> {
    let r: DetectResponse =
        serde_json::from_str(body).map_err(|e| Error::Analysis(format!("unreadable response: {e}")))?;
    if let Some(msg) = r.error_message {
        return Err(Error::Analysis(format!("api error: {msg}")));
    }
    let Some(face) = r.faces.first() else {
        return Ok(FaceAnalysisResult::no_face());
    };
    let attribute = match face.attributes.as_ref().and_then(|a| a.gender.as_ref()) {
        Some(g) if g.value.eq_ignore_ascii_case("male") => Some(Attribute::A),
        Some(g) if g.value.eq_ignore_ascii_case("female") => Some(Attribute::B),
        _ => None,
    };
    Ok(FaceAnalysisResult {
        face_detected: true,
        attribute,
        confidence: if attribute.is_some() { 1.0 } else { 0.0 },
    })
}

/// Builds a `multipart/form-data` body. Returns `(content_type, body)`.
pub fn multipart_body(fields: &[(&str, &str)], file_field: &str, file_name: &str, file: &[u8]) -> (String, Vec<u8>) {
    let boundary = "----biasprobe7d1f0c2e9b";
    let mut body = Vec::with_capacity(file.len() + 512);
    for (name, value) in fields {
        body.extend_from_slice(
            format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n").as_bytes(),
        );
    }
    body.extend_from_slice(
        format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"{file_field}\"; filename=\"{file_name}\"\r\nContent-Type: image/png\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(file);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            last_request: Mutex::new(None),
            requests: AtomicUsize::new(0),
        }
    }

    fn throttle(&self) {
        if self.config.rate_limit <= 0.0 {
            return;
        }
        let gap = Duration::from_secs_f64(1.0 / self.config.rate_limit);
        let mut last = self.last_request.lock().unwrap();
        if let Some(t) = *last {
            let since = t.elapsed();
            if since < gap {
                thread::sleep(gap - since);
            }
        }
        *last = Some(Instant::now());
    }

    fn send_once(&self, png: &[u8]) -> Result<FaceAnalysisResult> {
        self.throttle();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut fields = vec![("api_key", self.config.api_key.as_str()), ("return_attributes", "gender")];
        if let Some(s) = &self.config.api_secret {
            fields.push(("api_secret", s.as_str()));
        }
        let (content_type, body) = multipart_body(&fields, "image_file", "probe.png", png);
        let mut resp = self
            .agent
            .post(&self.config.url)
            .header("Content-Type", &content_type)
            .send(&body[..])
            .map_err(|e| Error::Analysis(format!("request failed: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Analysis(format!("reading response failed: {e}")))?;
        if status != 200 {
            return Err(Error::Analysis(format!("http {status}: {}", text.chars().take(200).collect::<String>())));
        }
        parse_response(&text)
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }
}

impl FaceAnalysisClient for RemoteClient {
    fn kind(&self) -> ClientKind {
        ClientKind::RemoteApi
    }

    /// Up to `attempts` tries with exponential backoff; the last error is
    /// returned, never a silent "no face".
    fn analyze(&self, image: &RgbImage) -> Result<FaceAnalysisResult> {
        let png = encode_png(image)?;
        let mut delay = self.config.backoff;
        let mut last = None;
        for attempt in 0..self.config.attempts.max(1) {
            if attempt > 0 {
                thread::sleep(delay);
                delay *= 2;
            }
            match self.send_once(&png) {
                Ok(r) => return Ok(r),
                Err(e) => {
                    log::warn!("face api attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(last.unwrap_or_else(|| Error::Analysis("no attempts made".into())))
    }

    fn calls(&self) -> usize {
        self.requests()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_detect_responses() {
        let r = parse_response(r#"{"faces":[{"attributes":{"gender":{"value":"Female"}}}]}"#).unwrap();
        assert_eq!(r.attribute, Some(Attribute::B));
        assert!(r.face_detected);
        let r = parse_response(r#"{"faces":[]}"#).unwrap();
        assert!(!r.face_detected);
        assert!(parse_response(r#"{"error_message":"CONCURRENCY_LIMIT_EXCEEDED"}"#).is_err());
        assert!(parse_response("<html>").is_err());
    }

    #[test]
    fn multipart_layout() {
        let (ct, body) = multipart_body(&[("api_key", "k")], "image_file", "a.png", b"PNG");
        let text = String::from_utf8(body).unwrap();
        let boundary = ct.split("boundary=").nth(1).unwrap();
        assert!(text.starts_with(&format!("--{boundary}\r\n")));
        assert!(text.contains("name=\"api_key\"\r\n\r\nk\r\n"));
        assert!(text.ends_with(&format!("\r\n--{boundary}--\r\n")));
    }
}
