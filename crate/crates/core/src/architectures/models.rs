use std::sync::Arc;

use image::RgbImage;
use ndarray::{Array1, Array2};
use rand::Rng;

use super::encoders::{ImageCache, ImageEncoder, TextCache, TextEncoder, TokenSequence};
use super::fusion::{FusionBlock, FusionCache};
use super::head::{ClassifierHead, HeadCache};
use super::{ArchError, ArchitectureConfig, ModelOutput};
use crate::nn::params::{join, Params};

/// One model input: token ids (without the classification token), optional
/// pre-extracted image patches, and the gold label.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<u32>,
    pub patches: Option<Arc<Array2<f64>>>,
    pub label: usize,
}

impl Example {
    fn patches(&self) -> Result<&Array2<f64>, ArchError> {
        self.patches.as_deref().ok_or_else(|| ArchError::MissingImage(self.id.clone()))
    }
}

/// Common surface of every trainable classifier.
pub trait Classifier: Params + Clone + Send + Sync {
    type Cache: Send;

    /// Short identifier stored in checkpoints.
    const KIND: &'static str;

    fn forward(&self, example: &Example) -> Result<(ModelOutput, Self::Cache), ArchError>;

    /// Accumulates parameter gradients into `grad`.
    fn backward(&self, cache: &Self::Cache, d_logits: &[f64], d_embedding: Option<&[f64]>, grad: &mut Self);

    fn num_classes(&self) -> usize;

    fn embedding_dim(&self) -> usize;

    fn uses_text(&self) -> bool;

    fn uses_image(&self) -> bool;

    fn predict(&self, example: &Example) -> Result<ModelOutput, ArchError> {
        self.forward(example).map(|(out, _)| out)
    }
}

/// Text encoder followed by a classification head on the text classification
/// token. Serves as both the unimodal baseline and the distilled student.
#[derive(Debug, Clone, PartialEq)]
pub struct TextClassifier {
    pub encoder: TextEncoder,
    pub head: ClassifierHead,
}

pub struct TextClassifierCache {
    encoder: TextCache,
    head: HeadCache,
    len: usize,
}

impl TextClassifier {
    pub fn new<R: Rng + ?Sized>(arch: &ArchitectureConfig, vocab_size: usize, k: usize, rng: &mut R) -> Result<Self, ArchError> {
        arch.validate()?;
        let encoder = TextEncoder::new(&arch.text_encoder, vocab_size, rng)?;
        let head = ClassifierHead::new(arch.text_encoder.d_model, arch.embedding_dim, k, rng)?;
        Ok(Self { encoder, head })
    }

    pub fn forward_tokens(&self, ids: &[u32]) -> Result<(ModelOutput, TextClassifierCache), ArchError> {
        let (seq, encoder) = self.encoder.encode(ids)?;
        let cls = seq.cls().to_owned();
        let (logits, embedding, head) = self.head.forward(&cls)?;
        Ok((ModelOutput::from_logits(logits, embedding), TextClassifierCache { encoder, head, len: seq.len() }))
    }
}

impl Classifier for TextClassifier {
    type Cache = TextClassifierCache;
    const KIND: &'static str = "text-classifier";

    fn forward(&self, example: &Example) -> Result<(ModelOutput, Self::Cache), ArchError> {
        self.forward_tokens(&example.tokens)
    }

    fn backward(&self, cache: &Self::Cache, d_logits: &[f64], d_embedding: Option<&[f64]>, grad: &mut Self) {
        let d_cls = self.head.backward(&cache.head, d_logits, d_embedding, &mut grad.head);
        let mut d_seq = Array2::zeros((cache.len, self.encoder.d_model()));
        d_seq.row_mut(0).assign(&d_cls);
        self.encoder.backward(&cache.encoder, &d_seq, &mut grad.encoder);
    }

    fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    fn embedding_dim(&self) -> usize {
        self.head.embedding_dim()
    }

    fn uses_text(&self) -> bool {
        true
    }

    fn uses_image(&self) -> bool {
        false
    }
}

impl Params for TextClassifier {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit(&join(prefix, "text_encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "text_encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Image encoder followed by a classification head; never sees text.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageClassifier {
    pub encoder: ImageEncoder,
    pub head: ClassifierHead,
}

pub struct ImageClassifierCache {
    encoder: ImageCache,
    head: HeadCache,
    len: usize,
}

impl ImageClassifier {
    pub fn new<R: Rng + ?Sized>(arch: &ArchitectureConfig, k: usize, rng: &mut R) -> Result<Self, ArchError> {
        arch.validate()?;
        let encoder = ImageEncoder::new(&arch.image_encoder, rng)?;
        let head = ClassifierHead::new(arch.image_encoder.d_model, arch.embedding_dim, k, rng)?;
        Ok(Self { encoder, head })
    }

    pub fn forward_patches(&self, patches: &Array2<f64>) -> Result<(ModelOutput, ImageClassifierCache), ArchError> {
        let (seq, encoder) = self.encoder.encode(patches)?;
        let cls = seq.cls().to_owned();
        let (logits, embedding, head) = self.head.forward(&cls)?;
        Ok((ModelOutput::from_logits(logits, embedding), ImageClassifierCache { encoder, head, len: seq.len() }))
    }
}

impl Classifier for ImageClassifier {
    type Cache = ImageClassifierCache;
    const KIND: &'static str = "image-classifier";

    fn forward(&self, example: &Example) -> Result<(ModelOutput, Self::Cache), ArchError> {
        self.forward_patches(example.patches()?)
    }

    fn backward(&self, cache: &Self::Cache, d_logits: &[f64], d_embedding: Option<&[f64]>, grad: &mut Self) {
        let d_cls = self.head.backward(&cache.head, d_logits, d_embedding, &mut grad.head);
        let mut d_seq = Array2::zeros((cache.len, d_cls.len()));
        d_seq.row_mut(0).assign(&d_cls);
        self.encoder.backward(&cache.encoder, &d_seq, &mut grad.encoder);
    }

    fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    fn embedding_dim(&self) -> usize {
        self.head.embedding_dim()
    }

    fn uses_text(&self) -> bool {
        false
    }

    fn uses_image(&self) -> bool {
        true
    }
}

impl Params for ImageClassifier {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit(&join(prefix, "image_encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "image_encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Multimodal teacher: text and image encoders, the cross-modal fusion block,
/// and a head over the concatenated classification tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub text_encoder: TextEncoder,
    pub image_encoder: ImageEncoder,
    pub fusion: FusionBlock,
    pub head: ClassifierHead,
}

pub struct TeacherCache {
    text: TextCache,
    image: ImageCache,
    fusion: FusionCache,
    head: HeadCache,
}

impl TeacherCache {
    pub fn fused_len(&self) -> usize {
        self.fusion.fused_len()
    }
}

impl Teacher {
    pub fn new<R: Rng + ?Sized>(arch: &ArchitectureConfig, vocab_size: usize, k: usize, rng: &mut R) -> Result<Self, ArchError> {
        arch.validate()?;
        if arch.text_encoder.d_model != arch.image_encoder.d_model {
            return Err(ArchError::DimensionMismatch {
                what: "image encoder d_model",
                expected: arch.text_encoder.d_model,
                got: arch.image_encoder.d_model,
            });
        }
        let d = arch.text_encoder.d_model;
        Ok(Self {
            text_encoder: TextEncoder::new(&arch.text_encoder, vocab_size, rng)?,
            image_encoder: ImageEncoder::new(&arch.image_encoder, rng)?,
            fusion: FusionBlock::new(d, arch.fusion_heads, arch.fusion_ffn_mult, rng)?,
            head: ClassifierHead::new(2 * d, arch.embedding_dim, k, rng)?,
        })
    }

    pub fn forward_parts(&self, ids: &[u32], patches: &Array2<f64>) -> Result<(ModelOutput, TeacherCache), ArchError> {
        let (text_seq, text) = self.text_encoder.encode(ids)?;
        let (image_seq, image) = self.image_encoder.encode(patches)?;
        self.forward_sequences(&text_seq, &image_seq).map(|(out, fusion, head)| {
            (out, TeacherCache { text, image, fusion, head })
        })
    }

    fn forward_sequences(
        &self,
        text: &TokenSequence,
        image: &TokenSequence,
    ) -> Result<(ModelOutput, FusionCache, HeadCache), ArchError> {
        let (fused, fusion) = self.fusion.forward(text, image)?;
        let (logits, embedding, head) = self.head.forward(&fused.concat())?;
        Ok((ModelOutput::from_logits(logits, embedding), fusion, head))
    }

    /// Forward pass from token ids and a raw image (resized as needed).
    pub fn forward_image(&self, ids: &[u32], image: &RgbImage) -> Result<ModelOutput, ArchError> {
        let patches = self.image_encoder.patches(image)?;
        self.forward_parts(ids, &patches).map(|(out, _)| out)
    }
}

impl Classifier for Teacher {
    type Cache = TeacherCache;
    const KIND: &'static str = "teacher";

    fn forward(&self, example: &Example) -> Result<(ModelOutput, Self::Cache), ArchError> {
        self.forward_parts(&example.tokens, example.patches()?)
    }

    fn backward(&self, cache: &Self::Cache, d_logits: &[f64], d_embedding: Option<&[f64]>, grad: &mut Self) {
        let d_concat = self.head.backward(&cache.head, d_logits, d_embedding, &mut grad.head);
        let d = self.fusion.d_model();
        let d_text_cls: Array1<f64> = d_concat.slice(ndarray::s![..d]).to_owned();
        let d_image_cls: Array1<f64> = d_concat.slice(ndarray::s![d..]).to_owned();
        let (d_text, d_image) = self.fusion.backward(&cache.fusion, &d_text_cls, &d_image_cls, &mut grad.fusion);
        self.text_encoder.backward(&cache.text, &d_text, &mut grad.text_encoder);
        self.image_encoder.backward(&cache.image, &d_image, &mut grad.image_encoder);
    }

    fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    fn embedding_dim(&self) -> usize {
        self.head.embedding_dim()
    }

    fn uses_text(&self) -> bool {
        true
    }

    fn uses_image(&self) -> bool {
        true
    }
}

impl Params for Teacher {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.text_encoder.visit(&join(prefix, "text_encoder"), f);
        self.image_encoder.visit(&join(prefix, "image_encoder"), f);
        self.fusion.visit(&join(prefix, "fusion"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.text_encoder.visit_mut(&join(prefix, "text_encoder"), f);
        self.image_encoder.visit_mut(&join(prefix, "image_encoder"), f);
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
