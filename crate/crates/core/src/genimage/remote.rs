//! HTTP generator client.
//!
//! Protocol: one `POST <endpoint>` per prompt with a JSON body
//! `{"prompt": str, "seed": u64, "width": u32, "height": u32, "settings": {..}}`.
//! A `200` response carries the encoded image (PNG) as its body. `429`, any
//! `5xx`, timeouts and transport failures are retried with exponential
//! backoff; other statuses fail immediately. A body that does not decode to an
//! image of the requested size is a protocol error.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ureq::Agent;

use super::{GenerateError, GeneratedImage, GeneratorBackend, ImageSize};

/// Upper bound on accepted response bodies.
const MAX_BODY_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_secs: f64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, base_delay_secs: 1.0, factor: 2.0 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): `base * factor^retry`.
    pub fn delay(&self, retry: u32) -> Duration {
        Duration::from_secs_f64(self.base_delay_secs * self.factor.powi(retry as i32))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Model identifier reported by the service; part of every fingerprint.
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Maximum requests in flight.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Sampler settings passed through verbatim (steps, guidance scale, ...).
    #[serde(default)]
    pub settings: BTreeMap<String, serde_json::Value>,
}

fn default_model_id() -> String {
    "remote".into()
}

fn default_timeout() -> f64 {
    120.0
}

fn default_concurrency() -> usize {
    1
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_id: default_model_id(),
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
            concurrency: default_concurrency(),
            settings: BTreeMap::new(),
        }
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration)
    }
}

#[derive(Serialize)]
struct RequestBody<'a> {
    prompt: &'a str,
    seed: u64,
    width: u32,
    height: u32,
    settings: &'a BTreeMap<String, serde_json::Value>,
}

enum Attempt {
    Transient(String),
    Fatal(GenerateError),
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: Agent,
    sleeper: Arc<dyn Sleeper>,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        Self::with_sleeper(config, Arc::new(ThreadSleeper))
    }

    pub fn with_sleeper(config: RemoteConfig, sleeper: Arc<dyn Sleeper>) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent, sleeper }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, body: &[u8], size: ImageSize) -> Result<RgbImage, Attempt> {
        let mut response = match self
            .agent
            .post(&self.config.endpoint)
            .header("content-type", "application/json")
            .send(body)
        {
            Ok(r) => r,
            Err(ureq::Error::BadUri(u)) => {
                return Err(Attempt::Fatal(GenerateError::Protocol(format!("bad endpoint uri {u}"))))
            }
            Err(e) => return Err(Attempt::Transient(e.to_string())),
        };
        let status = response.status().as_u16();
        if status == 429 || (500..600).contains(&status) {
            return Err(Attempt::Transient(format!("HTTP {status}")));
        }
        if status != 200 {
            return Err(Attempt::Fatal(GenerateError::Backend {
                attempts: 1,
                message: format!("HTTP {status} is not retryable"),
            }));
        }
        let bytes = match response.body_mut().with_config().limit(MAX_BODY_BYTES).read_to_vec() {
            Ok(b) => b,
            Err(e @ (ureq::Error::BodyExceedsLimit(_) | ureq::Error::Decompress(..))) => {
                return Err(Attempt::Fatal(GenerateError::Protocol(e.to_string())))
            }
            Err(e) => return Err(Attempt::Transient(e.to_string())),
        };
        let decoded = image::load_from_memory(&bytes)
            .map_err(|e| Attempt::Fatal(GenerateError::Protocol(format!("undecodable image body: {e}"))))?
            .to_rgb8();
        if decoded.dimensions() != (size.width, size.height) {
            return Err(Attempt::Fatal(GenerateError::Protocol(format!(
                "expected {}x{} image, got {}x{}",
                size.width,
                size.height,
                decoded.width(),
                decoded.height()
            ))));
        }
        Ok(decoded)
    }
}

impl GeneratorBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    /// Model id plus a hash of the sampler settings, so changing settings
    /// invalidates cached images.
    fn version(&self) -> String {
        let settings = serde_json::to_vec(&self.config.settings).expect("settings serialize");
        let h = hex::encode(Sha256::digest(&settings));
        format!("{}+{}", self.config.model_id, &h[..12])
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn concurrency_limit(&self) -> usize {
        self.config.concurrency.max(1)
    }

    fn generate(&self, prompt: &str, seed: u64, size: ImageSize) -> Result<RgbImage, GenerateError> {
        if prompt.trim().is_empty() {
            return Err(GenerateError::EmptyPrompt(String::new()));
        }
        if size.width == 0 || size.height == 0 {
            return Err(GenerateError::InvalidSize(size.width, size.height));
        }
        let body = serde_json::to_vec(&RequestBody {
            prompt,
            seed,
            width: size.width,
            height: size.height,
            settings: &self.config.settings,
        })
        .expect("request serializes");
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..max_attempts {
            if attempt > 0 {
                self.sleeper.sleep(self.config.retry.delay(attempt - 1));
            }
            match self.attempt(&body, size) {
                Ok(img) => return Ok(img),
                Err(Attempt::Fatal(GenerateError::Backend { message, .. })) => {
                    return Err(GenerateError::Backend { attempts: attempt + 1, message })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(msg)) => {
                    log::warn!("generation attempt {}/{max_attempts} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(GenerateError::Backend { attempts: max_attempts, message: last })
    }
}

/// One-shot convenience wrapper around [`RemoteBackend`].
pub fn remote_generate(
    prompt: &str,
    seed: u64,
    size: ImageSize,
    config: &RemoteConfig,
) -> Result<GeneratedImage, GenerateError> {
    let backend = RemoteBackend::new(config.clone());
    let pixels = backend.generate(prompt, seed, size)?;
    Ok(GeneratedImage { sample_id: String::new(), pixels, fingerprint: backend.fingerprint(prompt, seed, size) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        let delays: Vec<f64> = (0..4).map(|i| p.delay(i).as_secs_f64()).collect();
        assert_eq!(delays, vec![1.0, 2.0, 4.0, 8.0]);
    }

    #[test]
    fn config_defaults_and_strictness() {
        let c: RemoteConfig = toml::from_str("endpoint = \"http://localhost:1\"").unwrap();
        assert_eq!(c.timeout_secs, 120.0);
        assert_eq!(c.retry.max_attempts, 5);
        assert!(toml::from_str::<RemoteConfig>("endpoint = \"x\"\ntimeout = 3").is_err());
    }

    #[test]
    fn settings_change_version() {
        let a = RemoteBackend::new(RemoteConfig::new("http://localhost:1"));
        let mut cfg = RemoteConfig::new("http://localhost:1");
        cfg.settings.insert("steps".into(), 50.into());
        let b = RemoteBackend::new(cfg);
        assert_ne!(a.version(), b.version());
    }
}
