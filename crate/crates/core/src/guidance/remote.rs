use std::io::ErrorKind;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{NoisePrediction, NoiseQuery, ScoreModel};
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Largest image (in pixels) the client will send.
pub const MAX_PIXELS: usize = 1024 * 1024;
const PROTOCOL_VERSION: u32 = 1;
const RESPONSE_LIMIT: u64 = 256 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRequest {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub image_b64: String,
    pub condition_b64: String,
    pub prompt: String,
    pub negative_prompt: String,
    pub t: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseResponse {
    pub eps_cond_b64: String,
    pub eps_uncond_b64: String,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

/// Row-major float32 little-endian, base64.
pub fn encode_tensor(data: &[f64]) -> String {
    let bytes: Vec<u8> = data.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_tensor(s: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Protocol(format!("bad base64: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(Error::ShapeMismatch(format!(
            "expected {} float32 values, got {} bytes",
            expected,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

impl NoiseRequest {
    pub fn from_query(q: &NoiseQuery) -> Result<Self> {
        let img = q.noisy;
        if img.width * img.height > MAX_PIXELS {
            return Err(Error::InvalidInput(format!(
                "{}x{} image exceeds the {} pixel request limit",
                img.width, img.height, MAX_PIXELS
            )));
        }
        if img.channels != 3 {
            return Err(Error::InvalidInput("request image must be RGB".into()));
        }
        if (q.condition.width, q.condition.height) != (img.width, img.height) {
            return Err(Error::ShapeMismatch("condition and image sizes differ".into()));
        }
        Ok(Self {
            version: PROTOCOL_VERSION,
            width: img.width,
            height: img.height,
            image_b64: encode_tensor(&img.data),
            condition_b64: encode_tensor(&q.condition.visualization().data),
            prompt: q.prompt.to_string(),
            negative_prompt: q.negative_prompt.to_string(),
            t: q.t,
            seed: q.seed,
        })
    }
}

impl NoiseResponse {
    pub fn decode(&self, width: usize, height: usize) -> Result<NoisePrediction> {
        let n = width * height * 3;
        Ok(NoisePrediction {
            eps_cond: Image::from_data(width, height, 3, decode_tensor(&self.eps_cond_b64, n)?)?,
            eps_uncond: Image::from_data(width, height, 3, decode_tensor(&self.eps_uncond_b64, n)?)?,
        })
    }
}

/// HTTP client for a noise-prediction service.
pub struct RemoteGuidance {
    url: String,
    timeout: Duration,
    agent: ureq::Agent,
}

impl RemoteGuidance {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: format!("{}/v1/predict_noise", endpoint.trim_end_matches('/')),
            timeout,
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn map_err(&self, e: ureq::Error) -> Error {
        match e {
            ureq::Error::Timeout(_) => Error::Timeout(self.timeout),
            ureq::Error::Io(io) if matches!(io.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => {
                Error::Timeout(self.timeout)
            }
            other => Error::Transport(other.to_string()),
        }
    }

    pub fn send(&self, req: &NoiseRequest) -> Result<NoiseResponse> {
        let body = serde_json::to_string(req)?;
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| self.map_err(e))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(RESPONSE_LIMIT)
            .read_to_string()
            .map_err(|e| self.map_err(e))?;
        if status != 200 {
            let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
            return Err(Error::Server { status, message });
        }
        serde_json::from_str(&text).map_err(|e| Error::Protocol(e.to_string()))
    }
}

impl ScoreModel for RemoteGuidance {
    fn predict(&self, q: &NoiseQuery) -> Result<NoisePrediction> {
        let req = NoiseRequest::from_query(q)?;
        self.send(&req)?.decode(req.width, req.height)
    }
}
