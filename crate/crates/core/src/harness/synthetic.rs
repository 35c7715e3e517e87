//! Desk-scale stand-in task where the image carries label information the
//! text only partly has.
//!
//! Each class owns the tokens `w<t>` with `t % k == class`. A sample's text
//! draws every token from its class block with probability `1 - epsilon` and
//! uniformly from the whole vocabulary otherwise. Its image paints four
//! quadrants in a class-specific coloring: the true class with probability
//! `fidelity`, a uniformly chosen other class otherwise, plus uniform pixel
//! noise.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::corpus::{Dataset, DatasetKind, Split, TextSample};
use crate::genimage::{fingerprint, GeneratedImage, GeneratorSnapshot, ImageCache, ImageIndex, ImageSize};

pub const SYNTHETIC_BACKEND: &str = "synthetic";
const RENDERER_VERSION: &str = "quadrants-1";
const MAX_CLASSES: usize = 16;

const PALETTE: [[u8; 3]; 4] = [[220, 40, 40], [40, 200, 60], [40, 60, 220], [230, 210, 40]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    pub k: usize,
    pub vocab_size: usize,
    pub text_len: usize,
    /// Probability that a token ignores the label.
    pub epsilon: f64,
    /// Probability that the image shows the true class pattern.
    pub fidelity: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image_size: u32,
    /// Maximum absolute per-channel noise added to every pixel.
    pub pixel_noise: u8,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            k: 4,
            vocab_size: 200,
            text_len: 20,
            epsilon: 0.85,
            fidelity: 0.95,
            n_train: 2000,
            n_val: 500,
            n_test: 500,
            image_size: 16,
            pixel_noise: 32,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(format!("synthetic task: {m}")));
        if !(2..=MAX_CLASSES).contains(&self.k) {
            return bad(format!("k must be in 2..={MAX_CLASSES}, got {}", self.k));
        }
        if self.vocab_size < self.k {
            return bad(format!("vocab_size {} smaller than k {}", self.vocab_size, self.k));
        }
        if self.text_len == 0 {
            return bad("text_len must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.fidelity) {
            return bad(format!("fidelity {} outside [0, 1]", self.fidelity));
        }
        if self.n_train < self.k || self.n_val == 0 || self.n_test == 0 {
            return bad("need n_train >= k and non-empty val/test splits".into());
        }
        if self.image_size < 2 || self.image_size % 2 != 0 {
            return bad(format!("image_size must be even and >= 2, got {}", self.image_size));
        }
        Ok(())
    }

    fn hash(&self, seed: u64) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let mut h = Sha256::new();
        h.update(&json);
        h.update(seed.to_le_bytes());
        hex::encode(h.finalize())
    }

    /// Dataset name, unique per `(spec, seed)`.
    pub fn dataset_name(&self, seed: u64) -> String {
        format!("synthetic-{}", &self.hash(seed)[..10])
    }
}

/// Colors of the four quadrants (top-left, top-right, bottom-left,
/// bottom-right) for `class`. Distinct for every class below 16.
pub fn class_pattern(class: usize) -> [[u8; 3]; 4] {
    let step = 1 + class / 4;
    std::array::from_fn(|j| PALETTE[(class + j * step) % 4])
}

fn render(shown: usize, size: u32, noise: u8, rng: &mut ChaCha8Rng) -> RgbImage {
    let pattern = class_pattern(shown);
    let half = size / 2;
    RgbImage::from_fn(size, size, |x, y| {
        let q = usize::from(y >= half) * 2 + usize::from(x >= half);
        Rgb(pattern[q].map(|c| {
            let n = if noise == 0 { 0 } else { rng.random_range(-(noise as i16)..=noise as i16) };
            (c as i16 + n).clamp(0, 255) as u8
        }))
    })
}

fn draw_text(label: usize, spec: &SyntheticTaskSpec, rng: &mut ChaCha8Rng) -> String {
    // tokens of class c: c, c + k, c + 2k, ... below vocab_size
    let block = (spec.vocab_size - label).div_ceil(spec.k);
    (0..spec.text_len)
        .map(|_| {
            let t = if rng.random_bool(1.0 - spec.epsilon) {
                label + spec.k * rng.random_range(0..block)
            } else {
                rng.random_range(0..spec.vocab_size)
            };
            format!("w{t:03}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn draw_shown(label: usize, spec: &SyntheticTaskSpec, rng: &mut ChaCha8Rng) -> usize {
    if rng.random_bool(spec.fidelity) {
        label
    } else {
        let other = rng.random_range(0..spec.k - 1);
        if other >= label {
            other + 1
        } else {
            other
        }
    }
}

/// Builds the dataset and renders its images into `cache_dir`. Images whose
/// fingerprint is already cached are not rewritten.
pub fn make_synthetic_task(
    spec: &SyntheticTaskSpec,
    seed: u64,
    cache_dir: &Path,
) -> Result<(Dataset, ImageIndex), HarnessError> {
    spec.validate()?;
    let name = spec.dataset_name(seed);
    let version = format!("{RENDERER_VERSION}+{}", &spec.hash(seed)[..12]);
    let size = ImageSize::square(spec.image_size);
    let cache = ImageCache::new(cache_dir, &name);
    let mut index = ImageIndex::new(
        name.clone(),
        GeneratorSnapshot { backend: SYNTHETIC_BACKEND.into(), version: version.clone(), deterministic: true, seed, size },
    );
    let mut dataset = Dataset {
        name,
        kind: DatasetKind::Generic,
        k: spec.k,
        class_names: (0..spec.k).map(|c| format!("class{c}")).collect(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (stream, (split, n)) in [(Split::Train, spec.n_train), (Split::Val, spec.n_val), (Split::Test, spec.n_test)]
        .into_iter()
        .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        for i in 0..n {
            let label = i % spec.k;
            let text = draw_text(label, spec, &mut rng);
            let shown = draw_shown(label, spec, &mut rng);
            let pixels = render(shown, spec.image_size, spec.pixel_noise, &mut rng);
            let id = format!("{split}-{i:05}");
            let fp = fingerprint(SYNTHETIC_BACKEND, &version, seed, size, &format!("{id}\n{text}"));
            let entry = match cache.lookup(split, &id, &fp) {
                Ok(Some(_)) => crate::genimage::IndexEntry {
                    split,
                    path: ImageCache::relative_path(split, &id),
                    fingerprint: fp,
                },
                _ => cache.store(split, &GeneratedImage { sample_id: id.clone(), pixels, fingerprint: fp })?,
            };
            index.entries.insert(id.clone(), entry);
            let sample = TextSample {
                id,
                raw_text: text.clone(),
                clean_text: text.clone(),
                prompt_text: text,
                label,
                target_span: None,
                prompt_truncated: false,
            };
            match split {
                Split::Train => dataset.train.push(sample),
                Split::Val => dataset.val.push(sample),
                Split::Test => dataset.test.push(sample),
            }
        }
    }
    dataset.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    cache.write_index(&index)?;
    Ok((dataset, index))
}
