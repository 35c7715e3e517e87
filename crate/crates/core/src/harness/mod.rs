//! Experiment orchestration: run configs, the resumable pipeline, the
//! synthetic testbed, ablations and report emission.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod synthetic;

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::genimage::GenerateError;

pub use config::{DatasetSpec, GeneratorSpec, RunConfig};
pub use pipeline::{ablate, run_pipeline, DeployedModel, Pipeline};
pub use report::{emit_report, ReportFormat, ResultRow, ResultsTable, TableKind};
pub use synthetic::{make_synthetic_task, SyntheticTaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Generate,
    TrainBaseline,
    TrainTeacher,
    Distill,
    Evaluate,
    Ablate,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ingest => "ingest",
            Self::Generate => "generate",
            Self::TrainBaseline => "train-baseline",
            Self::TrainTeacher => "train-teacher",
            Self::Distill => "distill",
            Self::Evaluate => "evaluate",
            Self::Ablate => "ablate",
            Self::Report => "report",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Self::Ingest => 10,
            Self::Generate => 11,
            Self::TrainBaseline => 12,
            Self::TrainTeacher => 13,
            Self::Distill => 14,
            Self::Evaluate => 15,
            Self::Ablate => 16,
            Self::Report => 17,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("output directory is locked by another run ({0})")]
    Locked(PathBuf),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no results to report")]
    EmptyResults,
    #[error(transparent)]
    Images(#[from] GenerateError),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Attributes an error to `stage` unless it already names one.
    pub fn stage(stage: Stage) -> impl FnOnce(Self) -> Self {
        move |e| match e {
            e @ (Self::Stage { .. } | Self::Config(_) | Self::Locked(_)) => e,
            other => Self::Stage { stage, source: Box::new(other) },
        }
    }

    /// Process exit code: 2 config, 3 locked, 10..=17 per failed stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Locked(_) => 3,
            Self::Stage { stage, .. } => stage.exit_code(),
            Self::Io { .. } => 1,
            Self::EmptyResults => Stage::Report.exit_code(),
            Self::Images(_) => Stage::Generate.exit_code(),
        }
    }
}
