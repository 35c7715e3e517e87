//! Training stages: the multimodal teacher, the distilled student and the
//! unimodal reference classifiers, all sharing one minibatch loop.

pub mod data;
pub mod fit;
pub mod optim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::architectures::{ArchError, CheckpointError};
use crate::distill::{DistillError, LossBreakdown};
use crate::genimage::GenerateError;

pub use data::{prepare, ImageSource, PreparedData};
pub use fit::{
    distill_student, evaluate, mean_ce, select_best_epoch, train_teacher, train_unimodal, TrainedModel,
    UnimodalKind, UnimodalModel,
};
pub use optim::AdamW;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("sample {0} has no generated image")]
    MissingImage(String),
    #[error("non-finite loss at epoch {epoch}, step {step} (sample {sample}): {detail}")]
    NonFinite { epoch: usize, step: usize, sample: String, detail: String },
    #[error("{what}: teacher has {teacher}, student has {student}")]
    DimensionMismatch { what: &'static str, teacher: usize, student: usize },
    #[error("cannot evaluate on an empty split")]
    EmptySplit,
    #[error("teacher weights changed during distillation ({before} -> {after})")]
    TeacherModified { before: String, after: String },
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Images(#[from] GenerateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Initial learning rate, decayed linearly to zero over all steps.
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; off when absent.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 5e-5,
            epochs: 100,
            batch_size: 14,
            seed: 0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    /// Optimizer steps per epoch for `n` training samples.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// `lr0 * (1 - step / total_steps)`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64, TrainError> {
    if step > total_steps || total_steps == 0 {
        return Err(TrainError::StepOutOfRange { step, total: total_steps });
    }
    Ok(cfg.lr0 * (1.0 - step as f64 / total_steps as f64))
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Learning rate of the epoch's first step.
    pub lr: f64,
    pub steps: usize,
    /// Mean over training samples.
    pub train: LossBreakdown,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, 1000, &cfg).unwrap(), 5e-5);
        assert_eq!(lr_at(1000, 1000, &cfg).unwrap(), 0.0);
        assert_eq!(lr_at(500, 1000, &cfg).unwrap(), 2.5e-5);
        assert!(matches!(lr_at(1001, 1000, &cfg), Err(TrainError::StepOutOfRange { .. })));
    }

    #[test]
    fn partitioning() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.steps_per_epoch(30), 3);
        assert_eq!(cfg.steps_per_epoch(28), 2);
        assert_eq!(cfg.steps_per_epoch(1), 1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr0: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(toml::from_str::<TrainConfig>("lr = 0.1").is_err());
        let c: TrainConfig = toml::from_str("epochs = 3").unwrap();
        assert_eq!((c.epochs, c.batch_size, c.weight_decay), (3, 14, 0.01));
    }
}
