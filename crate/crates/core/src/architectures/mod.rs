//! Encoders, the cross-modal fusion block, classification heads and the
//! three model families (teacher, text classifier, image classifier).

pub mod checkpoint;
pub mod encoders;
pub mod fusion;
pub mod head;
pub mod models;
pub mod tokenizer;

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::softmax;
use crate::nn::InitError;
use crate::nn::Params;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use encoders::{image_patches, ImageEncoder, Modality, TextEncoder, TokenSequence};
pub use fusion::{FusedCls, FusionBlock};
pub use head::ClassifierHead;
pub use models::{Classifier, Example, ImageClassifier, Teacher, TextClassifier};
pub use tokenizer::Vocab;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("expected a {expected} encoder, got {got:?}")]
    WrongEncoderKind { expected: &'static str, got: EncoderKind },
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    OutOfVocabulary { id: u32, vocab: usize },
    #[error("image has zero size")]
    EmptyImage,
    #[error("patch matrix shape {got:?} does not match encoder {expected:?}")]
    PatchShape { expected: (usize, usize), got: (usize, usize) },
    #[error("sample {0} has no image")]
    MissingImage(String),
    #[error("pretrained weights not found at {0}")]
    MissingAsset(PathBuf),
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Class scores, their softmax, and the pre-classifier embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub embedding: Vec<f64>,
}

pub type TeacherOutput = ModelOutput;
pub type StudentOutput = ModelOutput;

impl ModelOutput {
    pub fn from_logits(logits: Vec<f64>, embedding: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        Self { logits, probs, embedding }
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold(0, |best, (i, p)| if *p > self.probs[best] { i } else { best })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    ToyText,
    ToyImage,
    /// A pretrained encoder whose weights were converted into this crate's
    /// checkpoint format; the architecture fields must describe it.
    ExternalAdapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub d_model: usize,
    pub depth: usize,
    pub heads: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    /// Text only: maximum token count before the classification token.
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    /// Image only: side length images are resized to.
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    /// Required for `external-adapter`.
    #[serde(default)]
    pub weights: Option<PathBuf>,
}

fn default_ffn_mult() -> usize {
    4
}
fn default_max_len() -> usize {
    tokenizer::DEFAULT_MAX_LEN
}
fn default_image_size() -> usize {
    32
}
fn default_patch_size() -> usize {
    8
}

impl EncoderSpec {
    pub fn toy_text(d_model: usize, depth: usize, heads: usize) -> Self {
        Self {
            kind: EncoderKind::ToyText,
            d_model,
            depth,
            heads,
            ffn_mult: default_ffn_mult(),
            max_len: default_max_len(),
            image_size: default_image_size(),
            patch_size: default_patch_size(),
            weights: None,
        }
    }

    pub fn toy_image(d_model: usize, depth: usize, heads: usize, image_size: usize, patch_size: usize) -> Self {
        Self { kind: EncoderKind::ToyImage, image_size, patch_size, ..Self::toy_text(d_model, depth, heads) }
    }

    pub fn num_patches(&self) -> usize {
        let side = self.image_size / self.patch_size.max(1);
        side * side
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(ArchError::InvalidSpec(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.ffn_mult == 0 {
            return Err(ArchError::InvalidSpec("ffn_mult must be positive".into()));
        }
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(ArchError::InvalidSpec(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.kind == EncoderKind::ExternalAdapter && self.weights.is_none() {
            return Err(ArchError::InvalidSpec("external-adapter encoders need a weights path".into()));
        }
        Ok(())
    }
}

/// Shapes of all three model families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub text_encoder: EncoderSpec,
    pub image_encoder: EncoderSpec,
    #[serde(default = "default_fusion_heads")]
    pub fusion_heads: usize,
    #[serde(default = "default_ffn_mult")]
    pub fusion_ffn_mult: usize,
    /// Width of the first head layer, shared by teacher and student.
    pub embedding_dim: usize,
}

fn default_fusion_heads() -> usize {
    8
}

impl ArchitectureConfig {
    /// Desk-scale profile: d_model 32, depth 2, embedding 16.
    pub fn toy() -> Self {
        Self {
            text_encoder: EncoderSpec::toy_text(32, 2, 4),
            image_encoder: EncoderSpec::toy_image(32, 2, 4, 32, 8),
            fusion_heads: 8,
            fusion_ffn_mult: 4,
            embedding_dim: 16,
        }
    }

    /// Sizes matching the pretrained-encoder setup (768-wide encoders, 224px
    /// images in 16px patches, 786-unit head).
    pub fn full_fidelity() -> Self {
        Self {
            text_encoder: EncoderSpec { max_len: 512, ..EncoderSpec::toy_text(768, 6, 12) },
            image_encoder: EncoderSpec::toy_image(768, 12, 12, 224, 16),
            fusion_heads: 8,
            fusion_ffn_mult: 4,
            embedding_dim: 786,
        }
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        self.text_encoder.validate()?;
        self.image_encoder.validate()?;
        if self.embedding_dim == 0 {
            return Err(ArchError::InvalidSpec("embedding_dim must be positive".into()));
        }
        if self.fusion_heads == 0 || self.text_encoder.d_model % self.fusion_heads != 0 {
            return Err(ArchError::InvalidSpec(format!(
                "fusion heads {} must divide d_model {}",
                self.fusion_heads, self.text_encoder.d_model
            )));
        }
        Ok(())
    }
}

/// How a model's weights are initialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitScheme {
    Xavier { seed: u64 },
    Pretrained { path: PathBuf },
}

/// Builds a model with Xavier-normal weights from a seeded generator, or
/// builds it and then overwrites every tensor from a checkpoint.
pub fn init_weights<M, F>(scheme: &InitScheme, build: F) -> Result<M, ArchError>
where
    M: Params,
    F: FnOnce(&mut ChaCha8Rng) -> Result<M, ArchError>,
{
    match scheme {
        InitScheme::Xavier { seed } => build(&mut ChaCha8Rng::seed_from_u64(*seed)),
        InitScheme::Pretrained { path } => {
            if !path.exists() {
                return Err(ArchError::MissingAsset(path.clone()));
            }
            let mut model = build(&mut ChaCha8Rng::seed_from_u64(0))?;
            Checkpoint::read(path)?.load_into(&mut model)?;
            Ok(model)
        }
    }
}

/// Overwrites encoder tensors from the `weights` checkpoints named in the
/// encoder specs (exported sub-modules, see
/// [`Checkpoint::load_prefixed_into`]). Models without the encoder are left
/// untouched.
pub fn load_encoder_weights<M: Params>(model: &mut M, arch: &ArchitectureConfig) -> Result<(), ArchError> {
    for (spec, prefix) in [(&arch.text_encoder, "text_encoder"), (&arch.image_encoder, "image_encoder")] {
        if let Some(path) = &spec.weights {
            if !path.exists() {
                return Err(ArchError::MissingAsset(path.clone()));
            }
            let mut present = false;
            model.visit("", &mut |name, _, _| present |= name.starts_with(&format!("{prefix}.")));
            if present {
                Checkpoint::read(path)?.load_prefixed_into(model, prefix)?;
            }
        }
    }
    Ok(())
}
