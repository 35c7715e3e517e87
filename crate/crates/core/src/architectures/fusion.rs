use ndarray::{s, Array1, Array2};
use rand::Rng;

use super::encoders::TokenSequence;
use super::ArchError;
use crate::nn::init::xavier_normal;
use crate::nn::params::{join, visit_array, visit_array_mut, Params};
use crate::nn::transformer::BlockCache;
use crate::nn::TransformerBlock;

/// Cross-modal encoder: one transformer block over the concatenated text and
/// image tokens, each tagged with a learned modality-type embedding. Only the
/// two classification-token outputs are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBlock {
    /// Row 0 is added to text tokens, row 1 to image tokens.
    pub type_embedding: Array2<f64>,
    pub block: TransformerBlock,
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    block: BlockCache,
    text_len: usize,
    text_cls: usize,
    image_cls: usize,
    fused_len: usize,
}

impl FusionCache {
    pub fn fused_len(&self) -> usize {
        self.fused_len
    }
}

/// Post-fusion vectors at the two tracked classification positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedCls {
    pub text: Array1<f64>,
    pub image: Array1<f64>,
}

impl FusedCls {
    pub fn concat(&self) -> Array1<f64> {
        ndarray::concatenate![ndarray::Axis(0), self.text, self.image]
    }
}

impl FusionBlock {
    pub fn new<R: Rng + ?Sized>(d_model: usize, heads: usize, ffn_mult: usize, rng: &mut R) -> Result<Self, ArchError> {
        if heads == 0 || d_model % heads != 0 {
            return Err(ArchError::InvalidSpec(format!(
                "fusion d_model {d_model} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            type_embedding: xavier_normal(2, d_model, rng)?,
            block: TransformerBlock::new(d_model, heads, ffn_mult, rng)?,
        })
    }

    pub fn d_model(&self) -> usize {
        self.type_embedding.ncols()
    }

    pub fn forward(&self, text: &TokenSequence, image: &TokenSequence) -> Result<(FusedCls, FusionCache), ArchError> {
        let d = self.d_model();
        if text.d_model() != d || image.d_model() != d {
            return Err(ArchError::DimensionMismatch {
                what: "fusion inputs",
                expected: d,
                got: if text.d_model() != d { text.d_model() } else { image.d_model() },
            });
        }
        let text_len = text.len();
        let fused_len = text_len + image.len();
        let mut x = Array2::zeros((fused_len, d));
        x.slice_mut(s![..text_len, ..]).assign(&text.embeddings);
        x.slice_mut(s![text_len.., ..]).assign(&image.embeddings);
        {
            let mut t = x.slice_mut(s![..text_len, ..]);
            t += &self.type_embedding.row(0);
        }
        {
            let mut i = x.slice_mut(s![text_len.., ..]);
            i += &self.type_embedding.row(1);
        }
        let (out, block) = self.block.forward(&x);
        let text_cls = text.cls_index;
        let image_cls = text_len + image.cls_index;
        Ok((
            FusedCls { text: out.row(text_cls).to_owned(), image: out.row(image_cls).to_owned() },
            FusionCache { block, text_len, text_cls, image_cls, fused_len },
        ))
    }

    /// Returns gradients for the text and image token sequences.
    pub fn backward(
        &self,
        cache: &FusionCache,
        d_text_cls: &Array1<f64>,
        d_image_cls: &Array1<f64>,
        grad: &mut Self,
    ) -> (Array2<f64>, Array2<f64>) {
        let mut d_out = Array2::zeros((cache.fused_len, self.d_model()));
        d_out.row_mut(cache.text_cls).assign(d_text_cls);
        {
            let mut r = d_out.row_mut(cache.image_cls);
            r += d_image_cls;
        }
        let dx = self.block.backward(&cache.block, &d_out, &mut grad.block);
        let d_text = dx.slice(s![..cache.text_len, ..]).to_owned();
        let d_image = dx.slice(s![cache.text_len.., ..]).to_owned();
        {
            let mut r = grad.type_embedding.row_mut(0);
            r += &d_text.sum_axis(ndarray::Axis(0));
        }
        {
            let mut r = grad.type_embedding.row_mut(1);
            r += &d_image.sum_axis(ndarray::Axis(0));
        }
        (d_text, d_image)
    }
}

impl Params for FusionBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_array(prefix, "type_embedding", &self.type_embedding, f);
        self.block.visit(&join(prefix, "block"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit_array_mut(prefix, "type_embedding", &mut self.type_embedding, f);
        self.block.visit_mut(&join(prefix, "block"), f);
    }
}
