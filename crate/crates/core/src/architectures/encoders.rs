use image::imageops::FilterType;
use image::RgbImage;
use ndarray::{s, Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tokenizer::CLS_ID;
use super::{ArchError, EncoderKind, EncoderSpec};
use crate::nn::init::{xavier_normal, xavier_vector};
use crate::nn::params::{join, visit_array, visit_array_mut, Params};
use crate::nn::{Linear, TransformerStack};
use crate::nn::transformer::StackCache;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

/// Encoder output: one row per token, with the classification token tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub embeddings: Array2<f64>,
    pub cls_index: usize,
    pub modality: Modality,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn d_model(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn cls(&self) -> ndarray::ArrayView1<'_, f64> {
        self.embeddings.row(self.cls_index)
    }
}

/// Token embedding + learned positions + transformer stack. Position 0 always
/// holds the classification token.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub stack: TransformerStack,
}

#[derive(Debug, Clone)]
pub struct TextCache {
    ids: Vec<u32>,
    stack: StackCache,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(spec: &EncoderSpec, vocab_size: usize, rng: &mut R) -> Result<Self, ArchError> {
        spec.validate()?;
        if spec.kind == EncoderKind::ToyImage {
            return Err(ArchError::WrongEncoderKind { expected: "text", got: spec.kind });
        }
        if vocab_size <= CLS_ID as usize {
            return Err(ArchError::InvalidSpec(format!("vocabulary of size {vocab_size} lacks special tokens")));
        }
        Ok(Self {
            token_embedding: xavier_normal(vocab_size, spec.d_model, rng)?,
            position_embedding: xavier_normal(spec.max_len + 1, spec.d_model, rng)?,
            stack: TransformerStack::new(spec.d_model, spec.depth, spec.heads, spec.ffn_mult, rng)?,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embedding.nrows()
    }

    pub fn max_len(&self) -> usize {
        self.position_embedding.nrows() - 1
    }

    pub fn d_model(&self) -> usize {
        self.token_embedding.ncols()
    }

    /// Prepends the classification token, truncates to the maximum length and
    /// runs the stack. Output has `min(len, max_len) + 1` rows.
    pub fn encode(&self, ids: &[u32]) -> Result<(TokenSequence, TextCache), ArchError> {
        let vocab = self.vocab_size();
        let mut seq = Vec::with_capacity(ids.len().min(self.max_len()) + 1);
        seq.push(CLS_ID);
        for &id in ids.iter().take(self.max_len()) {
            if id as usize >= vocab {
                return Err(ArchError::OutOfVocabulary { id, vocab });
            }
            seq.push(id);
        }
        let mut x = Array2::zeros((seq.len(), self.d_model()));
        for (pos, (mut row, &id)) in x.rows_mut().into_iter().zip(&seq).enumerate() {
            row.assign(&self.token_embedding.row(id as usize));
            row += &self.position_embedding.row(pos);
        }
        let (out, stack) = self.stack.forward(&x);
        Ok((
            TokenSequence { embeddings: out, cls_index: 0, modality: Modality::Text },
            TextCache { ids: seq, stack },
        ))
    }

    pub fn backward(&self, cache: &TextCache, d_out: &Array2<f64>, grad: &mut Self) {
        let dx = self.stack.backward(&cache.stack, d_out, &mut grad.stack);
        for (pos, (row, &id)) in dx.rows().into_iter().zip(&cache.ids).enumerate() {
            let mut t = grad.token_embedding.row_mut(id as usize);
            t += &row;
            let mut p = grad.position_embedding.row_mut(pos);
            p += &row;
        }
    }
}

impl Params for TextEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_array(prefix, "token_embedding", &self.token_embedding, f);
        visit_array(prefix, "position_embedding", &self.position_embedding, f);
        self.stack.visit(&join(prefix, "stack"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit_array_mut(prefix, "token_embedding", &mut self.token_embedding, f);
        visit_array_mut(prefix, "position_embedding", &mut self.position_embedding, f);
        self.stack.visit_mut(&join(prefix, "stack"), f);
    }
}

/// Resizes an 8-bit RGB image to `size x size` (when needed) and cuts it into
/// non-overlapping `patch x patch` tiles in row-major order. Each row of the
/// result is one flattened tile with channel values scaled to `[0, 1]`.
pub fn image_patches(image: &RgbImage, size: usize, patch: usize) -> Result<Array2<f64>, ArchError> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(ArchError::EmptyImage);
    }
    if patch == 0 || size == 0 || size % patch != 0 {
        return Err(ArchError::InvalidSpec(format!("image size {size} is not a multiple of patch {patch}")));
    }
    let resized;
    let img = if w as usize == size && h as usize == size {
        image
    } else {
        resized = image::imageops::resize(image, size as u32, size as u32, FilterType::Triangle);
        &resized
    };
    let per_side = size / patch;
    let mut out = Array2::zeros((per_side * per_side, patch * patch * 3));
    for py in 0..per_side {
        for px in 0..per_side {
            let mut row = out.row_mut(py * per_side + px);
            let mut j = 0;
            for y in 0..patch {
                for x in 0..patch {
                    let p = img.get_pixel((px * patch + x) as u32, (py * patch + y) as u32);
                    for c in 0..3 {
                        row[j] = f64::from(p[c]) / 255.0;
                        j += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Patch projection + learned classification token and positions + stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoder {
    pub patch_projection: Linear,
    pub cls_token: Array1<f64>,
    pub position_embedding: Array2<f64>,
    pub stack: TransformerStack,
    image_size: usize,
    patch_size: usize,
}

#[derive(Debug, Clone)]
pub struct ImageCache {
    patches: Array2<f64>,
    stack: StackCache,
}

impl ImageEncoder {
    pub fn new<R: Rng + ?Sized>(spec: &EncoderSpec, rng: &mut R) -> Result<Self, ArchError> {
        spec.validate()?;
        if spec.kind == EncoderKind::ToyText {
            return Err(ArchError::WrongEncoderKind { expected: "image", got: spec.kind });
        }
        let patches = spec.num_patches();
        Ok(Self {
            patch_projection: Linear::new(spec.patch_size * spec.patch_size * 3, spec.d_model, rng)?,
            cls_token: xavier_vector(spec.d_model, rng)?,
            position_embedding: xavier_normal(patches + 1, spec.d_model, rng)?,
            stack: TransformerStack::new(spec.d_model, spec.depth, spec.heads, spec.ffn_mult, rng)?,
            image_size: spec.image_size,
            patch_size: spec.patch_size,
        })
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.position_embedding.nrows() - 1
    }

    pub fn patches(&self, image: &RgbImage) -> Result<Array2<f64>, ArchError> {
        image_patches(image, self.image_size, self.patch_size)
    }

    pub fn encode_image(&self, image: &RgbImage) -> Result<(TokenSequence, ImageCache), ArchError> {
        self.encode(&self.patches(image)?)
    }

    /// Encodes pre-extracted patches (see [`image_patches`]). Output has
    /// `P + 1` rows with the classification token at index 0.
    pub fn encode(&self, patches: &Array2<f64>) -> Result<(TokenSequence, ImageCache), ArchError> {
        let expected = (self.num_patches(), self.patch_projection.d_in());
        if patches.dim() != expected {
            return Err(ArchError::PatchShape { expected, got: patches.dim() });
        }
        let d = self.cls_token.len();
        let mut x = Array2::zeros((patches.nrows() + 1, d));
        x.row_mut(0).assign(&self.cls_token);
        x.slice_mut(s![1.., ..]).assign(&self.patch_projection.forward(patches));
        x += &self.position_embedding;
        let (out, stack) = self.stack.forward(&x);
        Ok((
            TokenSequence { embeddings: out, cls_index: 0, modality: Modality::Image },
            ImageCache { patches: patches.clone(), stack },
        ))
    }

    pub fn backward(&self, cache: &ImageCache, d_out: &Array2<f64>, grad: &mut Self) {
        let dx = self.stack.backward(&cache.stack, d_out, &mut grad.stack);
        grad.position_embedding += &dx;
        grad.cls_token += &dx.row(0);
        let d_proj = dx.slice(s![1.., ..]).to_owned();
        self.patch_projection.accumulate(&cache.patches, &d_proj, &mut grad.patch_projection);
    }
}

impl Params for ImageEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.patch_projection.visit(&join(prefix, "patch_projection"), f);
        visit_array(prefix, "cls_token", &self.cls_token, f);
        visit_array(prefix, "position_embedding", &self.position_embedding, f);
        self.stack.visit(&join(prefix, "stack"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.patch_projection.visit_mut(&join(prefix, "patch_projection"), f);
        visit_array_mut(prefix, "cls_token", &mut self.cls_token, f);
        visit_array_mut(prefix, "position_embedding", &mut self.position_embedding, f);
        self.stack.visit_mut(&join(prefix, "stack"), f);
    }
}
