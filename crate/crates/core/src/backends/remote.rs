//! HTTP/JSON client for remote inference servers.
//!
//! Wire protocol:
//!
//! | endpoint            | request                         | response              |
//! |---------------------|---------------------------------|-----------------------|
//! | `POST /v1/caption`  | `{image_b64, prompt}`           | `{text}`              |
//! | `POST /v1/generate` | `{text, seed, params}`          | `{image_b64}`         |
//! | `POST /v1/embed`    | `{image_b64}`                   | `{vector, dim}`       |
//!
//! Failures come back as `{"error": {"code", "message"}}`. A bearer token is
//! read from `I2T2I_API_TOKEN` when set. Each attempt is bounded by
//! `timeout_s`; transport failures, 429 and 5xx are retried with exponential
//! backoff, at most `max_retries` attempts in total.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Captioner, ChunkTokenizer, Encoder, Generator, Tokenizer};
use crate::error::{Error, Result};
use crate::model::{BackendDescriptor, Image, ParamValue};

pub const TOKEN_ENV_VAR: &str = "I2T2I_API_TOKEN";

const MAX_RESPONSE_BYTES: u64 = 256 * 1024 * 1024;

/// Descriptor params consumed by the client itself rather than forwarded to the server.
pub const CLIENT_PARAMS: &[&str] =
    &["endpoint", "timeout_s", "max_retries", "backoff_ms", "max_in_flight", "deterministic", "token_limit", "dim"];

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { timeout: Duration::from_secs(120), max_attempts: 3, backoff_base: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn from_descriptor(d: &BackendDescriptor) -> Self {
        let default = Self::default();
        RetryPolicy {
            timeout: Duration::from_secs_f64(d.param_f64("timeout_s", default.timeout.as_secs_f64()).max(0.001)),
            max_attempts: d.param_i64("max_retries", default.max_attempts as i64).max(1) as u32,
            backoff_base: Duration::from_millis(d.param_i64("backoff_ms", default.backoff_base.as_millis() as i64).max(0) as u64),
        }
    }

    /// Delay before retry number `attempt` (1-based count of failures so far).
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.backoff_base.saturating_mul(1u32 << (attempt.saturating_sub(1)).min(16))
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight { available: Mutex::new(limit.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Deserialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Debug, Deserialize)]
struct ErrorDetail {
    code: String,
    message: String,
}

enum Attempt<T> {
    Done(T),
    Retry(Error),
    Fail(Error),
}

/// Blocking client shared by the three remote backend roles.
pub struct RemoteClient {
    agent: ureq::Agent,
    endpoint: String,
    token: Option<String>,
    retry: RetryPolicy,
    in_flight: InFlight,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient")
            .field("endpoint", &self.endpoint)
            .field("retry", &self.retry)
            .field("authenticated", &self.token.is_some())
            .finish()
    }
}

impl RemoteClient {
    pub fn new(endpoint: impl Into<String>, retry: RetryPolicy, max_in_flight: usize) -> Self {
        let token = std::env::var(TOKEN_ENV_VAR).ok().filter(|t| !t.is_empty());
        Self::with_token(endpoint, retry, max_in_flight, token)
    }

    pub fn with_token(endpoint: impl Into<String>, retry: RetryPolicy, max_in_flight: usize, token: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(retry.timeout))
            .http_status_as_error(false)
            .build();
        RemoteClient {
            agent: config.into(),
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            token,
            retry,
            in_flight: InFlight::new(max_in_flight),
        }
    }

    pub fn from_descriptor(d: &BackendDescriptor) -> Result<Self> {
        let endpoint = d
            .param("endpoint")
            .and_then(ParamValue::as_str)
            .ok_or_else(|| Error::Configuration(format!("remote backend {} has no endpoint param", d.name)))?;
        let max_in_flight = d.param_i64("max_in_flight", 4).max(1) as usize;
        Ok(Self::new(endpoint, RetryPolicy::from_descriptor(d), max_in_flight))
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.retry
    }

    /// POSTs `body` to `path`, retrying per the policy.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let url = format!("{}{}", self.endpoint, path);
        let _permit = self.in_flight.acquire();
        let mut last = None;
        for attempt in 1..=self.retry.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.backoff(attempt - 1));
            }
            match self.attempt(&url, body) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("{url}: attempt {attempt}/{} failed: {e}", self.retry.max_attempts);
                    last = Some(e);
                }
            }
        }
        Err(last.unwrap_or_else(|| Error::Transport(format!("{url}: no attempts made"))))
    }

    fn attempt<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Attempt<R> {
        let mut request = self.agent.post(url).header("Accept", "application/json");
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = match request.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(Error::Transport(format!("{url}: {e}"))),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().with_config().limit(MAX_RESPONSE_BYTES).read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(Error::Transport(format!("{url}: reading body: {e}"))),
        };
        if (200..300).contains(&status) {
            return match serde_json::from_str(&text) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fail(Error::BackendFault(format!("{url}: malformed response: {e}"))),
            };
        }
        let detail = serde_json::from_str::<ErrorBody>(&text)
            .map(|b| b.error)
            .unwrap_or(ErrorDetail { code: format!("http_{status}"), message: text.chars().take(200).collect() });
        let msg = format!("{url}: HTTP {status} {}: {}", detail.code, detail.message);
        if detail.code == "content_policy" {
            return Attempt::Fail(Error::ContentPolicy(detail.message));
        }
        match status {
            429 | 500..=599 => Attempt::Retry(Error::Transport(msg)),
            401 | 403 => Attempt::Fail(Error::Transport(msg)),
            _ => Attempt::Fail(Error::BackendFault(msg)),
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CaptionRequest {
    pub image_b64: String,
    pub prompt: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CaptionResponse {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GenerateRequest {
    pub text: String,
    pub seed: u64,
    pub params: BTreeMap<String, ParamValue>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GenerateResponse {
    pub image_b64: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EmbedRequest {
    pub image_b64: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
    pub dim: usize,
}

fn png_b64(image: &Image) -> Result<String> {
    Ok(BASE64.encode(image.encode_png()?))
}

fn model_params(d: &BackendDescriptor) -> BTreeMap<String, ParamValue> {
    d.params.iter().filter(|(k, _)| !CLIENT_PARAMS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect()
}

pub struct RemoteCaptioner {
    client: Arc<RemoteClient>,
    tokenizer: Box<dyn Tokenizer>,
}

impl RemoteCaptioner {
    /// The token budget is enforced client-side with `tokenizer`, which should
    /// match the remote model's.
    pub fn new(client: Arc<RemoteClient>, tokenizer: Box<dyn Tokenizer>) -> Self {
        RemoteCaptioner { client, tokenizer }
    }

    pub fn with_default_tokenizer(client: Arc<RemoteClient>) -> Self {
        Self::new(client, Box::new(ChunkTokenizer::default()))
    }
}

impl Captioner for RemoteCaptioner {
    fn raw_caption(&self, image: &Image, prompt: &str) -> Result<String> {
        let req = CaptionRequest { image_b64: png_b64(image)?, prompt: prompt.to_string() };
        let resp: CaptionResponse = self.client.post("/v1/caption", &req)?;
        Ok(resp.text)
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }
}

pub struct RemoteGenerator {
    client: Arc<RemoteClient>,
    params: BTreeMap<String, ParamValue>,
}

impl RemoteGenerator {
    pub fn new(client: Arc<RemoteClient>, descriptor: &BackendDescriptor) -> Self {
        RemoteGenerator { client, params: model_params(descriptor) }
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, text: &str, seed: u64) -> Result<RgbImage> {
        let req = GenerateRequest { text: text.to_string(), seed, params: self.params.clone() };
        let resp: GenerateResponse = self.client.post("/v1/generate", &req)?;
        let bytes = BASE64
            .decode(resp.image_b64.as_bytes())
            .map_err(|e| Error::BackendFault(format!("generated image is not base64: {e}")))?;
        let decoded = image::load_from_memory(&bytes)
            .map_err(|e| Error::BackendFault(format!("generated image does not decode: {e}")))?;
        Ok(decoded.to_rgb8())
    }
}

pub struct RemoteEncoder {
    client: Arc<RemoteClient>,
}

impl RemoteEncoder {
    pub fn new(client: Arc<RemoteClient>) -> Self {
        RemoteEncoder { client }
    }
}

impl Encoder for RemoteEncoder {
    fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        let req = EmbedRequest { image_b64: png_b64(image)? };
        let resp: EmbedResponse = self.client.post("/v1/embed", &req)?;
        if resp.vector.len() != resp.dim {
            return Err(Error::BackendFault(format!(
                "embed response has {} values but dim {}",
                resp.vector.len(),
                resp.dim
            )));
        }
        if resp.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::BackendFault("embed response contains non-finite values".into()));
        }
        Ok(resp.vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BackendKind;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy { timeout: Duration::from_secs(1), max_attempts: 4, backoff_base: Duration::from_millis(100) };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(400));
    }

    #[test]
    fn policy_from_descriptor() {
        let d = BackendDescriptor::new(BackendKind::Generator, "sd3", "1")
            .with_param("timeout_s", 2.5)
            .with_param("max_retries", 0)
            .with_param("backoff_ms", 10);
        let p = RetryPolicy::from_descriptor(&d);
        assert_eq!(p.timeout, Duration::from_millis(2500));
        assert_eq!(p.max_attempts, 1);
        assert_eq!(p.backoff_base, Duration::from_millis(10));
    }

    #[test]
    fn client_params_are_not_forwarded() {
        let d = BackendDescriptor::new(BackendKind::Generator, "sd3", "1")
            .with_param("endpoint", "http://x")
            .with_param("steps", 28)
            .with_param("guidance", 7.0);
        let p = model_params(&d);
        assert_eq!(p.keys().collect::<Vec<_>>(), vec!["guidance", "steps"]);
    }

    #[test]
    fn missing_endpoint_is_config_error() {
        let d = BackendDescriptor::new(BackendKind::Encoder, "dinov2", "1");
        assert!(matches!(RemoteClient::from_descriptor(&d), Err(Error::Configuration(_))));
    }
}
