use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::ArchError;
use crate::nn::params::{join, Params};
use crate::nn::{gelu, gelu_derivative, Linear};

/// Two-layer classification head. The activation of the first layer is the
/// embedding reported to the distillation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub hidden: Linear,
    pub classifier: Linear,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    embedding: Array2<f64>,
}

impl ClassifierHead {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_e: usize, k: usize, rng: &mut R) -> Result<Self, ArchError> {
        if k < 2 {
            return Err(ArchError::InvalidSpec(format!("need at least two classes, got {k}")));
        }
        Ok(Self { hidden: Linear::new(d_in, d_e, rng)?, classifier: Linear::new(d_e, k, rng)? })
    }

    pub fn d_in(&self) -> usize {
        self.hidden.d_in()
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden.d_out()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.d_out()
    }

    /// Returns `(logits, embedding)`.
    pub fn forward(&self, x: &Array1<f64>) -> Result<(Vec<f64>, Vec<f64>, HeadCache), ArchError> {
        if x.len() != self.d_in() {
            return Err(ArchError::DimensionMismatch { what: "head input", expected: self.d_in(), got: x.len() });
        }
        let input = x.clone().insert_axis(Axis(0));
        let pre = self.hidden.forward(&input);
        let embedding = pre.mapv(gelu);
        let logits = self.classifier.forward(&embedding);
        Ok((
            logits.iter().copied().collect(),
            embedding.iter().copied().collect(),
            HeadCache { input, pre, embedding },
        ))
    }

    /// `d_embedding` carries any loss gradient applied directly to the
    /// embedding. Returns the gradient with respect to the head input.
    pub fn backward(
        &self,
        cache: &HeadCache,
        d_logits: &[f64],
        d_embedding: Option<&[f64]>,
        grad: &mut Self,
    ) -> Array1<f64> {
        let dl = Array2::from_shape_vec((1, d_logits.len()), d_logits.to_vec()).expect("logit gradient shape");
        let mut de = self.classifier.backward(&cache.embedding, &dl, &mut grad.classifier);
        if let Some(extra) = d_embedding {
            for (g, e) in de.iter_mut().zip(extra) {
                *g += e;
            }
        }
        de.zip_mut_with(&cache.pre, |g, &p| *g *= gelu_derivative(p));
        let dx = self.hidden.backward(&cache.input, &de, &mut grad.hidden);
        dx.index_axis_move(Axis(0), 0)
    }
}

impl Params for ClassifierHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}
