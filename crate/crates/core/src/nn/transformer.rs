use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::init::InitError;
use super::layers::{gelu, gelu_derivative, softmax_rows, LayerNorm, LayerNormCache, Linear};
use super::params::{join, Params};

/// Multi-head scaled dot-product self-attention over all tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(d_model: usize, heads: usize, rng: &mut R) -> Result<Self, InitError> {
        assert!(heads > 0 && d_model % heads == 0, "d_model must be divisible by heads");
        Ok(Self {
            query: Linear::new(d_model, d_model, rng)?,
            key: Linear::new(d_model, d_model, rng)?,
            value: Linear::new(d_model, d_model, rng)?,
            output: Linear::new(d_model, d_model, rng)?,
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, AttentionCache) {
        let d = x.ncols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let mut context = Array2::zeros(x.raw_dim());
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut p = q.slice(cols).dot(&k.slice(cols).t());
            p *= scale;
            softmax_rows(&mut p);
            context.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let out = self.output.forward(&context);
        (out, AttentionCache { x: x.clone(), q, k, v, probs, context })
    }

    pub fn backward(&self, cache: &AttentionCache, dy: &Array2<f64>, grad: &mut Self) -> Array2<f64> {
        let d = dy.ncols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dcontext = self.output.backward(&cache.context, dy, &mut grad.output);
        let mut dq = Array2::zeros(dy.raw_dim());
        let mut dk = Array2::zeros(dy.raw_dim());
        let mut dv = Array2::zeros(dy.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx = dcontext.slice(cols);
            let dp = dctx.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx));
            let mut ds = &dp * p;
            let row_dot = ds.sum_axis(Axis(1));
            for ((mut ds_row, p_row), r) in ds.rows_mut().into_iter().zip(p.rows()).zip(row_dot.iter()) {
                ds_row.zip_mut_with(&p_row, |g, &pv| *g -= pv * r);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let mut dx = self.query.backward(&cache.x, &dq, &mut grad.query);
        dx += &self.key.backward(&cache.x, &dk, &mut grad.key);
        dx += &self.value.backward(&cache.x, &dv, &mut grad.value);
        dx
    }
}

impl Params for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + ffn(ln(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub norm_attn: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    norm_attn: LayerNormCache,
    attention: AttentionCache,
    norm_ffn: LayerNormCache,
    ffn_input: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        d_model: usize,
        heads: usize,
        ffn_mult: usize,
        rng: &mut R,
    ) -> Result<Self, InitError> {
        Ok(Self {
            norm_attn: LayerNorm::new(d_model),
            attention: MultiHeadAttention::new(d_model, heads, rng)?,
            norm_ffn: LayerNorm::new(d_model),
            ffn_in: Linear::new(d_model, d_model * ffn_mult, rng)?,
            ffn_out: Linear::new(d_model * ffn_mult, d_model, rng)?,
        })
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, BlockCache) {
        let (a, norm_attn) = self.norm_attn.forward(x);
        let (attn, attention) = self.attention.forward(&a);
        let x1 = x + &attn;
        let (ffn_input, norm_ffn) = self.norm_ffn.forward(&x1);
        let hidden_pre = self.ffn_in.forward(&ffn_input);
        let hidden = hidden_pre.mapv(gelu);
        let out = &x1 + &self.ffn_out.forward(&hidden);
        (out, BlockCache { norm_attn, attention, norm_ffn, ffn_input, hidden_pre, hidden })
    }

    pub fn backward(&self, cache: &BlockCache, dy: &Array2<f64>, grad: &mut Self) -> Array2<f64> {
        let mut dhidden = self.ffn_out.backward(&cache.hidden, dy, &mut grad.ffn_out);
        dhidden.zip_mut_with(&cache.hidden_pre, |g, &h| *g *= gelu_derivative(h));
        let dffn_input = self.ffn_in.backward(&cache.ffn_input, &dhidden, &mut grad.ffn_in);
        let mut dx1 = self.norm_ffn.backward(&cache.norm_ffn, &dffn_input, &mut grad.norm_ffn);
        dx1 += dy;
        let da = self.attention.backward(&cache.attention, &dx1, &mut grad.attention);
        let mut dx = self.norm_attn.backward(&cache.norm_attn, &da, &mut grad.norm_attn);
        dx += &dx1;
        dx
    }
}

impl Params for TransformerBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.norm_attn.visit(&join(prefix, "norm_attn"), f);
        self.attention.visit(&join(prefix, "attention"), f);
        self.norm_ffn.visit(&join(prefix, "norm_ffn"), f);
        self.ffn_in.visit(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit(&join(prefix, "ffn_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.norm_attn.visit_mut(&join(prefix, "norm_attn"), f);
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.norm_ffn.visit_mut(&join(prefix, "norm_ffn"), f);
        self.ffn_in.visit_mut(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit_mut(&join(prefix, "ffn_out"), f);
    }
}

/// A stack of blocks followed by a final layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerStack {
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct StackCache {
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
}

impl TransformerStack {
    pub fn new<R: Rng + ?Sized>(
        d_model: usize,
        depth: usize,
        heads: usize,
        ffn_mult: usize,
        rng: &mut R,
    ) -> Result<Self, InitError> {
        let blocks = (0..depth)
            .map(|_| TransformerBlock::new(d_model, heads, ffn_mult, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { blocks, norm: LayerNorm::new(d_model) })
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, StackCache) {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&h);
            caches.push(cache);
            h = next;
        }
        let (out, norm) = self.norm.forward(&h);
        (out, StackCache { blocks: caches, norm })
    }

    pub fn backward(&self, cache: &StackCache, dy: &Array2<f64>, grad: &mut Self) -> Array2<f64> {
        let mut d = self.norm.backward(&cache.norm, dy, &mut grad.norm);
        for ((block, bcache), bgrad) in self
            .blocks
            .iter()
            .zip(&cache.blocks)
            .zip(grad.blocks.iter_mut())
            .rev()
        {
            d = block.backward(bcache, &d, bgrad);
        }
        d
    }
}

impl Params for TransformerStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.blocks.visit(&join(prefix, "blocks"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}
