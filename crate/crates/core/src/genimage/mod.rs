//! Privileged-image generation: pluggable generator backends, a fingerprinted
//! PNG cache and the per-dataset image index.

pub mod cache;
pub mod generate;
pub mod mock;
pub mod remote;

use std::path::PathBuf;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{cache_lookup, ImageCache, ImageIndex, IndexEntry};
pub use cache::GeneratorSnapshot;
pub use generate::{generate_all, FailedSample, GenerateOptions};
pub use mock::{mock_generate, MockBackend};
pub use remote::{remote_generate, RemoteBackend, RemoteConfig, RetryPolicy, Sleeper, ThreadSleeper};

/// Resolution images are generated at unless configured otherwise.
pub const DEFAULT_IMAGE_SIZE: ImageSize = ImageSize { width: 512, height: 512 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn square(side: u32) -> Self {
        Self { width: side, height: side }
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("empty prompt for sample {0}")]
    EmptyPrompt(String),
    #[error("image size must be positive, got {0}x{1}")]
    InvalidSize(u32, u32),
    #[error("backend failed after {attempts} attempt(s): {message}")]
    Backend { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("integrity error in {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },
    #[error("cache I/O on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("nothing to generate: dataset is empty")]
    EmptyDataset,
    #[error("{} sample(s) failed: {}", failed.len(), failed.iter().map(|f| f.id.as_str()).collect::<Vec<_>>().join(", "))]
    Partial { index: Box<ImageIndex>, failed: Vec<FailedSample> },
}

impl GenerateError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

/// A cached privileged image together with the fingerprint of the exact
/// generator call that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub sample_id: String,
    pub pixels: RgbImage,
    pub fingerprint: String,
}

/// A text-to-image generator.
pub trait GeneratorBackend: Send + Sync {
    /// Backend family, e.g. `mock` or `remote`.
    fn name(&self) -> &str;

    /// Model or implementation version; changes invalidate cached images.
    fn version(&self) -> String;

    /// Whether equal `(prompt, seed, size)` always yields equal pixels.
    fn deterministic(&self) -> bool;

    /// Maximum number of whitespace tokens a prompt may carry.
    fn prompt_budget(&self) -> usize {
        crate::corpus::PROMPT_TOKEN_BUDGET
    }

    /// Number of requests that may be in flight at once.
    fn concurrency_limit(&self) -> usize {
        1
    }

    fn generate(&self, prompt: &str, seed: u64, size: ImageSize) -> Result<RgbImage, GenerateError>;

    fn fingerprint(&self, prompt: &str, seed: u64, size: ImageSize) -> String {
        fingerprint(self.name(), &self.version(), seed, size, prompt)
    }
}

/// `<backend>/<version>/seed=<seed>/<w>x<h>/<sha256(prompt)>`.
pub fn fingerprint(backend: &str, version: &str, seed: u64, size: ImageSize, prompt: &str) -> String {
    let hash = hex::encode(Sha256::digest(prompt.as_bytes()));
    format!("{backend}/{version}/seed={seed}/{}x{}/{hash}", size.width, size.height)
}
