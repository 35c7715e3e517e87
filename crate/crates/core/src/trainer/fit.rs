use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::AdamW;
use super::{lr_at, EpochMetrics, PreparedData, TrainConfig, TrainError};
use crate::architectures::{
    init_weights, load_encoder_weights, ArchitectureConfig, Checkpoint, Classifier, Example, ImageClassifier, InitScheme, ModelOutput,
    Teacher, TextClassifier,
};
use crate::corpus::Split;
use crate::distill::{hard_ce_with_grad, kd_loss_with_grad, one_hot, DistillConfig, LossBreakdown};
use crate::nn::params::{add_into, digest, l2_norm, scale, zeros_like};

/// Weights of the selected epoch plus the full training record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<M> {
    pub model: M,
    pub config: TrainConfig,
    pub history: Vec<EpochMetrics>,
    /// 1-based epoch whose weights `model` holds.
    pub best_epoch: usize,
}

impl<M: Classifier> TrainedModel<M> {
    pub fn best_metrics(&self) -> &EpochMetrics {
        &self.history[self.best_epoch - 1]
    }

    /// Checkpoint with the training record merged into `extra` metadata.
    pub fn checkpoint(&self, mut extra: serde_json::Value) -> Checkpoint {
        if !extra.is_object() {
            extra = serde_json::json!({});
        }
        let obj = extra.as_object_mut().expect("object");
        obj.insert("train_config".into(), serde_json::to_value(&self.config).expect("config serializes"));
        obj.insert("history".into(), serde_json::to_value(&self.history).expect("history serializes"));
        obj.insert("best_epoch".into(), self.best_epoch.into());
        Checkpoint::from_model(&self.model, M::KIND, extra)
    }

    /// Rebuilds a trained model from a checkpoint written by [`Self::checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint, mut model: M) -> Result<Self, TrainError> {
        ckpt.expect_kind(M::KIND)?;
        ckpt.load_into(&mut model)?;
        let field = |name: &str| {
            ckpt.metadata.get(name).cloned().ok_or_else(|| {
                TrainError::InvalidConfig(format!("checkpoint metadata lacks '{name}'"))
            })
        };
        let parse = |e: serde_json::Error| TrainError::InvalidConfig(format!("checkpoint metadata: {e}"));
        Ok(Self {
            model,
            config: serde_json::from_value(field("train_config")?).map_err(parse)?,
            history: serde_json::from_value(field("history")?).map_err(parse)?,
            best_epoch: serde_json::from_value(field("best_epoch")?).map_err(parse)?,
        })
    }

    /// One JSON object per epoch.
    pub fn write_metrics(&self, path: &Path) -> std::io::Result<()> {
        let mut out = Vec::new();
        for m in &self.history {
            serde_json::to_writer(&mut out, m)?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&out)?;
        f.sync_all()
    }
}

/// Epoch with the highest validation accuracy, earliest on ties (1-based).
pub fn select_best_epoch(history: &[EpochMetrics]) -> Option<usize> {
    let mut best: Option<&EpochMetrics> = None;
    for m in history {
        if best.is_none_or(|b| m.val_accuracy > b.val_accuracy) {
            best = Some(m);
        }
    }
    best.map(|m| m.epoch)
}

struct SampleResult {
    loss: LossBreakdown,
    correct: bool,
}

/// Per-sample objective: accumulates the gradient of the sample loss into the
/// last argument. The `usize` is the sample's position in the training split.
trait Objective<M>: Fn(&M, &Example, usize, &mut M) -> Result<SampleResult, TrainError> + Sync {}
impl<M, F: Fn(&M, &Example, usize, &mut M) -> Result<SampleResult, TrainError> + Sync> Objective<M> for F {}

fn cross_entropy_objective<M: Classifier>(
    model: &M,
    ex: &Example,
    _: usize,
    grad: &mut M,
) -> Result<SampleResult, TrainError> {
    let (out, cache) = model.forward(ex)?;
    let (ce, d_logits) = hard_ce_with_grad(&out.logits, ex.label);
    model.backward(&cache, &d_logits, None, grad);
    Ok(SampleResult { loss: LossBreakdown::hard_only(ce), correct: out.argmax() == ex.label })
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

fn fit<M: Classifier>(
    mut model: M,
    data: &PreparedData,
    cfg: &TrainConfig,
    label: &str,
    objective: impl Objective<M>,
) -> Result<TrainedModel<M>, TrainError> {
    cfg.validate()?;
    let n = data.train.len();
    if n == 0 || data.val.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let steps_per_epoch = cfg.steps_per_epoch(n);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut opt = AdamW::new(&model, cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, M)> = None;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let first_lr = lr_at(step, total_steps, cfg)?;
        let mut sum = LossBreakdown::default();
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let lr = lr_at(step, total_steps, cfg)?;
            let results: Vec<Result<(SampleResult, M), TrainError>> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = zeros_like(&model);
                    objective(&model, &data.train[i], i, &mut g).map(|r| (r, g))
                })
                .collect();
            let mut grad: Option<M> = None;
            for (&i, r) in batch.iter().zip(results) {
                let (r, g) = r?;
                if !r.loss.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        step,
                        sample: data.train[i].id.clone(),
                        detail: format!("{:?}", r.loss),
                    });
                }
                sum.accumulate(&r.loss);
                correct += usize::from(r.correct);
                match grad.as_mut() {
                    None => grad = Some(g),
                    Some(acc) => add_into(acc, &g),
                }
            }
            let mut grad = grad.expect("non-empty batch");
            scale(&mut grad, 1.0 / batch.len() as f64);
            if let Some(clip) = cfg.grad_clip {
                let norm = l2_norm(&grad);
                if norm > clip {
                    scale(&mut grad, clip / norm);
                }
            }
            if !l2_norm(&grad).is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    step,
                    sample: data.train[batch[0]].id.clone(),
                    detail: "gradient".into(),
                });
            }
            opt.step(&mut model, &grad, lr);
            step += 1;
        }
        let val_accuracy = evaluate(&model, &data.val)?;
        let metrics = EpochMetrics {
            epoch,
            lr: first_lr,
            steps: steps_per_epoch,
            train: sum.scaled(1.0 / n as f64),
            train_accuracy: correct as f64 / n as f64,
            val_accuracy,
        };
        log::info!(
            "{label} epoch {epoch}/{}: loss {:.4} (ce {:.4}) train acc {:.3} val acc {:.3}",
            cfg.epochs,
            metrics.train.total,
            metrics.train.ce_hard,
            metrics.train_accuracy,
            val_accuracy
        );
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, model.clone()));
        }
        history.push(metrics);
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    debug_assert_eq!(select_best_epoch(&history), Some(best_epoch));
    Ok(TrainedModel { model, config: cfg.clone(), history, best_epoch })
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn evaluate<M: Classifier>(model: &M, examples: &[Example]) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let hits: Vec<bool> = examples
        .par_iter()
        .map(|ex| model.predict(ex).map(|out| out.argmax() == ex.label))
        .collect::<Result<_, _>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / examples.len() as f64)
}

/// Mean cross-entropy against the labels, without touching the weights.
pub fn mean_ce<M: Classifier>(model: &M, examples: &[Example]) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| model.predict(ex).map(|out| hard_ce_with_grad(&out.logits, ex.label).0))
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains the multimodal teacher with plain cross-entropy.
pub fn train_teacher(
    init: &InitScheme,
    arch: &ArchitectureConfig,
    data: &PreparedData,
    cfg: &TrainConfig,
) -> Result<TrainedModel<Teacher>, TrainError> {
    cfg.validate()?;
    data.require_images(&Split::ALL)?;
    let mut teacher = init_weights(init, |rng| Teacher::new(arch, data.vocab.len(), data.k, rng))?;
    load_encoder_weights(&mut teacher, arch)?;
    fit(teacher, data, cfg, "teacher", cross_entropy_objective)
}

/// Trains a text-only student against labels and the frozen teacher's
/// softened outputs and embeddings.
pub fn distill_student(
    init: &InitScheme,
    arch: &ArchitectureConfig,
    teacher: &Teacher,
    data: &PreparedData,
    cfg: &TrainConfig,
    dcfg: &DistillConfig,
) -> Result<TrainedModel<TextClassifier>, TrainError> {
    cfg.validate()?;
    dcfg.validate()?;
    data.require_images(&[Split::Train])?;
    let mut student = init_weights(init, |rng| TextClassifier::new(arch, data.vocab.len(), data.k, rng))?;
    load_encoder_weights(&mut student, arch)?;
    if teacher.embedding_dim() != student.embedding_dim() {
        return Err(TrainError::DimensionMismatch {
            what: "embedding dimension",
            teacher: teacher.embedding_dim(),
            student: student.embedding_dim(),
        });
    }
    if teacher.num_classes() != student.num_classes() {
        return Err(TrainError::DimensionMismatch {
            what: "class count",
            teacher: teacher.num_classes(),
            student: student.num_classes(),
        });
    }
    let before = digest(teacher);
    // The teacher is frozen, so its outputs are the same at every step.
    let targets: Vec<ModelOutput> =
        data.train.par_iter().map(|ex| teacher.predict(ex)).collect::<Result<_, _>>()?;
    let k = data.k;
    let objective = |m: &TextClassifier, ex: &Example, i: usize, g: &mut TextClassifier| {
        let (out, cache) = m.forward(ex)?;
        let (loss, grad) = kd_loss_with_grad(&one_hot(ex.label, k), &targets[i], &out, dcfg)?;
        let d_emb = (dcfg.beta != 0.0).then_some(grad.embedding.as_slice());
        m.backward(&cache, &grad.logits, d_emb, g);
        Ok(SampleResult { loss, correct: out.argmax() == ex.label })
    };
    let trained = fit(student, data, cfg, "student", objective)?;
    let after = digest(teacher);
    if before != after {
        return Err(TrainError::TeacherModified { before, after });
    }
    Ok(trained)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnimodalKind {
    TextClassifier,
    ImageClassifier,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UnimodalModel {
    Text(TrainedModel<TextClassifier>),
    Image(TrainedModel<ImageClassifier>),
}

/// Cross-entropy training of a single-modality reference classifier.
pub fn train_unimodal(
    kind: UnimodalKind,
    init: &InitScheme,
    arch: &ArchitectureConfig,
    data: &PreparedData,
    cfg: &TrainConfig,
) -> Result<UnimodalModel, TrainError> {
    cfg.validate()?;
    match kind {
        UnimodalKind::TextClassifier => {
            let mut model = init_weights(init, |rng| TextClassifier::new(arch, data.vocab.len(), data.k, rng))?;
            load_encoder_weights(&mut model, arch)?;
            fit(model, data, cfg, "text", cross_entropy_objective).map(UnimodalModel::Text)
        }
        UnimodalKind::ImageClassifier => {
            data.require_images(&Split::ALL)?;
            let mut model = init_weights(init, |rng| ImageClassifier::new(arch, data.k, rng))?;
            load_encoder_weights(&mut model, arch)?;
            fit(model, data, cfg, "image", cross_entropy_objective).map(UnimodalModel::Image)
        }
    }
}
