//! Cross-entropy, temperature softening, the embedding distance term and the
//! combined distillation objective used to train text-only students.
//!
//! All functions here are stateless and operate on plain slices. Gradients are
//! returned with respect to the student's logits and pre-classifier embedding;
//! teacher values are treated as constants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::architectures::ModelOutput;

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on `sum(p) == 1` for probability-vector arguments.
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistillError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("negative probability {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("probability vector sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("{name} must be non-negative and finite, got {value}")]
    InvalidWeight { name: &'static str, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, DistillError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Weight of the soft-label cross-entropy term.
    pub alpha: f64,
    /// Weight of the embedding distance term.
    pub beta: f64,
    /// Softening temperature applied to teacher logits.
    pub tau: f64,
    /// Also soften the student distribution inside the soft-label term.
    pub soften_student: bool,
    /// Divide the squared embedding distance by the embedding dimension.
    pub normalize_sqdist: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            beta: 1.0,
            tau: 8.0,
            soften_student: true,
            normalize_sqdist: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(DistillError::InvalidWeight { name: "alpha", value: self.alpha });
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(DistillError::InvalidWeight { name: "beta", value: self.beta });
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(DistillError::InvalidTemperature(self.tau));
        }
        Ok(())
    }
}

/// Per-sample (or batch-averaged) value of each objective term.
///
/// `total = ce_hard + alpha * ce_soft + beta * emb_sqdist`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce_hard: f64,
    pub ce_soft: f64,
    pub emb_sqdist: f64,
}

impl LossBreakdown {
    /// Plain cross-entropy training: the other terms are zero.
    pub fn hard_only(ce: f64) -> Self {
        Self { total: ce, ce_hard: ce, ce_soft: 0.0, emb_sqdist: 0.0 }
    }

    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.ce_hard += other.ce_hard;
        self.ce_soft += other.ce_soft;
        self.emb_sqdist += other.emb_sqdist;
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            total: self.total * s,
            ce_hard: self.ce_hard * s,
            ce_soft: self.ce_soft * s,
            emb_sqdist: self.emb_sqdist * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.ce_hard.is_finite()
            && self.ce_soft.is_finite()
            && self.emb_sqdist.is_finite()
    }
}

/// Gradient of the distillation objective with respect to the student.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentGradient {
    pub logits: Vec<f64>,
    pub embedding: Vec<f64>,
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for (index, &value) in p.iter().enumerate() {
        if !value.is_finite() {
            return Err(DistillError::NonFinite("probability vector"));
        }
        if value < 0.0 {
            return Err(DistillError::NegativeEntry { index, value });
        }
        sum += value;
    }
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(DistillError::NotNormalized { sum });
    }
    Ok(())
}

/// `-sum_j target_j * ln(pred_j)`, with `0 * ln(0) = 0` and `pred` clamped to
/// [`PROB_FLOOR`].
pub fn cross_entropy(target: &[f64], pred: &[f64]) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(DistillError::LengthMismatch { left: target.len(), right: pred.len() });
    }
    check_distribution(target)?;
    check_distribution(pred)?;
    Ok(cross_entropy_unchecked(target, pred))
}

fn cross_entropy_unchecked(target: &[f64], pred: &[f64]) -> f64 {
    let mut ce = 0.0;
    for (&t, &p) in target.iter().zip(pred) {
        if t > 0.0 {
            ce -= t * p.max(PROB_FLOOR).ln();
        }
    }
    // -0.0 when every target term vanishes
    ce.max(0.0)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// `softmax(logits / tau)`.
pub fn soften(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(DistillError::InvalidTemperature(tau));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(DistillError::NonFinite("logits"));
    }
    if tau == 1.0 {
        return Ok(softmax(logits));
    }
    let scaled: Vec<f64> = logits.iter().map(|&z| z / tau).collect();
    Ok(softmax(&scaled))
}

/// Squared Euclidean distance, optionally divided by the dimension.
pub fn embedding_sqdist(teacher: &[f64], student: &[f64], normalize: bool) -> Result<f64> {
    if teacher.len() != student.len() {
        return Err(DistillError::LengthMismatch { left: teacher.len(), right: student.len() });
    }
    let sq: f64 = teacher.iter().zip(student).map(|(t, s)| (t - s) * (t - s)).sum();
    if normalize && !teacher.is_empty() {
        Ok(sq / teacher.len() as f64)
    } else {
        Ok(sq)
    }
}

/// The joint distillation objective for one sample.
///
/// `target` is the one-hot (or any normalized) label distribution.
pub fn kd_loss(
    target: &[f64],
    teacher: &ModelOutput,
    student: &ModelOutput,
    cfg: &DistillConfig,
) -> Result<LossBreakdown> {
    kd_loss_with_grad(target, teacher, student, cfg).map(|(loss, _)| loss)
}

/// [`kd_loss`] together with its gradient with respect to the student's
/// logits and embedding. Terms with zero weight contribute nothing to the
/// gradient, so `alpha = beta = 0` reproduces plain cross-entropy training
/// bit for bit.
pub fn kd_loss_with_grad(
    target: &[f64],
    teacher: &ModelOutput,
    student: &ModelOutput,
    cfg: &DistillConfig,
) -> Result<(LossBreakdown, StudentGradient)> {
    cfg.validate()?;
    let k = target.len();
    for len in [teacher.logits.len(), student.logits.len()] {
        if len != k {
            return Err(DistillError::LengthMismatch { left: k, right: len });
        }
    }
    if teacher.embedding.len() != student.embedding.len() {
        return Err(DistillError::LengthMismatch {
            left: teacher.embedding.len(),
            right: student.embedding.len(),
        });
    }
    check_distribution(target)?;

    let probs = softmax(&student.logits);
    let ce_hard = cross_entropy_unchecked(target, &probs);
    let mut grad_logits: Vec<f64> = probs.iter().zip(target).map(|(p, y)| p - y).collect();

    let teacher_soft = soften(&teacher.logits, cfg.tau)?;
    let (student_soft, soft_scale) = if cfg.soften_student {
        (soften(&student.logits, cfg.tau)?, 1.0 / cfg.tau)
    } else {
        (probs.clone(), 1.0)
    };
    let ce_soft = cross_entropy_unchecked(&teacher_soft, &student_soft);
    if cfg.alpha != 0.0 {
        for ((g, q), t) in grad_logits.iter_mut().zip(&student_soft).zip(&teacher_soft) {
            *g += cfg.alpha * soft_scale * (q - t);
        }
    }

    let emb_sqdist = embedding_sqdist(&teacher.embedding, &student.embedding, cfg.normalize_sqdist)?;
    let mut grad_emb = vec![0.0; student.embedding.len()];
    if cfg.beta != 0.0 {
        let scale = if cfg.normalize_sqdist && !grad_emb.is_empty() {
            2.0 * cfg.beta / grad_emb.len() as f64
        } else {
            2.0 * cfg.beta
        };
        for ((g, s), t) in grad_emb.iter_mut().zip(&student.embedding).zip(&teacher.embedding) {
            *g = scale * (s - t);
        }
    }

    let total = ce_hard + cfg.alpha * ce_soft + cfg.beta * emb_sqdist;
    let loss = LossBreakdown { total, ce_hard, ce_soft, emb_sqdist };
    if !loss.is_finite() {
        return Err(DistillError::NonFinite("loss"));
    }
    Ok((loss, StudentGradient { logits: grad_logits, embedding: grad_emb }))
}

/// Cross-entropy of `softmax(logits)` against a one-hot label and its gradient
/// with respect to the logits.
pub fn hard_ce_with_grad(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut probs = softmax(logits);
    let ce = -probs[label].max(PROB_FLOOR).ln();
    probs[label] -= 1.0;
    (ce, probs)
}

pub fn one_hot(label: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    v
}
