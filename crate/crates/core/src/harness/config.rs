//! Run configuration (TOML). Unknown keys are rejected everywhere.
//!
//! ```toml
//! seeds = [1, 2, 3]
//!
//! [dataset]
//! source = "synthetic"        # or "corpus" (kind + path) or "manifest" (path)
//! epsilon = 0.85
//!
//! [generator]                 # ignored for synthetic datasets
//! backend = "mock"            # or "remote" with a [generator.remote] table
//! seed = 0
//! size = 512
//!
//! [architecture]              # defaults to the toy profile
//! [train]                     # lr0, epochs, batch_size, weight_decay, ...
//! [distill]                   # alpha, beta, tau, soften_student, normalize_sqdist
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticTaskSpec;
use super::HarnessError;
use crate::architectures::ArchitectureConfig;
use crate::corpus::DatasetKind;
use crate::distill::DistillConfig;
use crate::genimage::{ImageSize, RemoteConfig, DEFAULT_IMAGE_SIZE};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// A public corpus in its standard layout.
    Corpus { kind: DatasetKind, path: PathBuf },
    /// A manifest written by `ingest`.
    Manifest { path: PathBuf },
    Synthetic(SyntheticTaskSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Mock {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_size")]
        size: u32,
        #[serde(default)]
        max_workers: Option<usize>,
    },
    Remote {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_size")]
        size: u32,
        #[serde(default)]
        max_workers: Option<usize>,
        remote: RemoteConfig,
    },
}

fn default_size() -> u32 {
    DEFAULT_IMAGE_SIZE.width
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self::Mock { seed: 0, size: default_size(), max_workers: None }
    }
}

impl GeneratorSpec {
    pub fn seed(&self) -> u64 {
        match self {
            Self::Mock { seed, .. } | Self::Remote { seed, .. } => *seed,
        }
    }

    pub fn size(&self) -> ImageSize {
        match self {
            Self::Mock { size, .. } | Self::Remote { size, .. } => ImageSize::square(*size),
        }
    }

    pub fn max_workers(&self) -> Option<usize> {
        match self {
            Self::Mock { max_workers, .. } | Self::Remote { max_workers, .. } => *max_workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default = "ArchitectureConfig::toy")]
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    /// Used when no `--out` is given.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Each seed drives weight initialization and data order of one repeat.
    pub seeds: Vec<u64>,
    /// Also train the image-only reference classifier.
    #[serde(default = "yes")]
    pub image_only: bool,
}

fn yes() -> bool {
    true
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a config file; relative dataset paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.dataset {
            DatasetSpec::Corpus { path, .. } | DatasetSpec::Manifest { path } if path.is_relative() => {
                *path = base.join(&*path);
            }
            _ => {}
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every invariant that can be checked before any work starts.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seed list contains duplicates".into());
        }
        match &self.dataset {
            DatasetSpec::Corpus { path, .. } | DatasetSpec::Manifest { path } => {
                if !path.exists() {
                    return bad(format!("dataset path {} does not exist", path.display()));
                }
            }
            DatasetSpec::Synthetic(spec) => spec.validate()?,
        }
        if self.generator.size().width == 0 {
            return bad("generator size must be positive".into());
        }
        self.architecture.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        for spec in [&self.architecture.text_encoder, &self.architecture.image_encoder] {
            if let Some(w) = &spec.weights {
                if !w.exists() {
                    return bad(format!("encoder weights {} do not exist", w.display()));
                }
            }
        }
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.distill.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}
