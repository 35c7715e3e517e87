//! The end-to-end pipeline over an output directory:
//!
//! ```text
//! <out>/run.lock                      held while a run is active
//! <out>/config.toml                   snapshot of the run config
//! <out>/dataset/manifest.jsonl        ingested dataset
//! <out>/images/<dataset>/...          image cache and index.json
//! <out>/seed-<s>/<model>.ckpt         best-validation checkpoints
//! <out>/seed-<s>/<model>.metrics.jsonl
//! <out>/results.{json,csv,md}         main table
//! <out>/ablation.{json,csv,md}        loss-term ablation table
//! ```
//!
//! Every stage first looks for its persisted output and reuses it, so an
//! interrupted run resumes where it stopped.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde_json::json;

use super::config::{DatasetSpec, GeneratorSpec, RunConfig};
use super::report::{emit_report, ReportFormat, ResultRow, ResultsTable, TableKind};
use super::synthetic::make_synthetic_task;
use super::{HarnessError, Stage};
use crate::architectures::{
    Checkpoint, Classifier, Example, ImageClassifier, InitScheme, Teacher, TextClassifier, Vocab,
};
use crate::corpus::{export_manifest, import_manifest, load_dataset, Dataset};
use crate::distill::DistillConfig;
use crate::genimage::{
    generate_all, GenerateOptions, GeneratorBackend, ImageCache, ImageIndex, MockBackend, RemoteBackend,
};
use crate::trainer::{
    distill_student, evaluate, prepare, train_teacher, train_unimodal, ImageSource, PreparedData, TrainConfig,
    TrainedModel, UnimodalKind, UnimodalModel,
};

pub const BASELINE: &str = "baseline";
pub const IMAGE_ONLY: &str = "image-only";
pub const TEACHER: &str = "teacher";
pub const STUDENT: &str = "student";

fn in_stage<E: std::error::Error + Send + Sync + 'static>(stage: Stage) -> impl FnOnce(E) -> HarnessError {
    move |e| HarnessError::Stage { stage, source: Box::new(e) }
}

/// Exclusive claim on an output directory. A lock left behind by a process
/// that no longer exists is taken over.
#[derive(Debug)]
struct RunLock {
    path: PathBuf,
}

fn process_alive(pid: u32) -> bool {
    if cfg!(target_os = "linux") {
        Path::new("/proc").join(pid.to_string()).exists()
    } else {
        true
    }
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join("run.lock");
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = write!(f, "{}", std::process::id());
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let owner = fs::read_to_string(&path).ok().and_then(|s| s.trim().parse::<u32>().ok());
                    match owner {
                        Some(pid) if pid != std::process::id() && !process_alive(pid) => {
                            log::warn!("removing stale lock of process {pid}");
                            let _ = fs::remove_file(&path);
                        }
                        _ => return Err(HarnessError::Locked(path)),
                    }
                }
                Err(e) => return Err(HarnessError::io(&path, e)),
            }
        }
        Err(HarnessError::Locked(path))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

struct Loaded {
    dataset: Dataset,
    data: PreparedData,
}

/// One run over one output directory.
pub struct Pipeline {
    cfg: RunConfig,
    out: PathBuf,
    text_only: OnceLock<Loaded>,
    full: OnceLock<Loaded>,
    _lock: RunLock,
}

/// The four student variants of the loss-term ablation, as
/// `(name, soft-label term on, embedding term on, config)`.
pub fn ablation_variants(base: &DistillConfig) -> Vec<(String, bool, bool, DistillConfig)> {
    let defaults = DistillConfig::default();
    let alpha = if base.alpha > 0.0 { base.alpha } else { defaults.alpha };
    let beta = if base.beta > 0.0 { base.beta } else { defaults.beta };
    [(false, false), (true, false), (false, true), (true, true)]
        .into_iter()
        .map(|(soft, emb)| {
            let cfg = DistillConfig {
                alpha: if soft { alpha } else { 0.0 },
                beta: if emb { beta } else { 0.0 },
                ..base.clone()
            };
            let name = if cfg == *base {
                STUDENT.to_string()
            } else {
                format!("{STUDENT}-{}{}", if soft { "soft" } else { "nosoft" }, if emb { "-emb" } else { "-noemb" })
            };
            (name, soft, emb, cfg)
        })
        .collect()
}

impl Pipeline {
    /// Validates the config, claims `out` and records the config snapshot.
    /// An output directory created by a different config is refused.
    pub fn open(cfg: RunConfig, out: &Path) -> Result<Self, HarnessError> {
        cfg.validate()?;
        fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
        let lock = RunLock::acquire(out)?;
        let snapshot = out.join("config.toml");
        let text = cfg.to_toml();
        match fs::read_to_string(&snapshot) {
            Ok(existing) if existing != text => {
                return Err(HarnessError::Config(format!(
                    "{} holds a run with a different config; use a fresh output directory",
                    out.display()
                )))
            }
            Ok(_) => {}
            Err(_) => fs::write(&snapshot, text).map_err(|e| HarnessError::io(&snapshot, e))?,
        }
        Ok(Self { cfg, out: out.to_path_buf(), text_only: OnceLock::new(), full: OnceLock::new(), _lock: lock })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn manifest_path(&self) -> PathBuf {
        self.out.join("dataset").join("manifest.jsonl")
    }

    fn image_dir(&self) -> PathBuf {
        self.out.join("images")
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    pub fn checkpoint_path(&self, seed: u64, model: &str) -> PathBuf {
        self.seed_dir(seed).join(format!("{model}.ckpt"))
    }

    fn metrics_path(&self, seed: u64, model: &str) -> PathBuf {
        self.seed_dir(seed).join(format!("{model}.metrics.jsonl"))
    }

    /// Loads (or synthesizes) the dataset and persists it as a manifest.
    pub fn ingest(&self) -> Result<Dataset, HarnessError> {
        let manifest = self.manifest_path();
        if manifest.exists() {
            return import_manifest(&manifest).map_err(in_stage(Stage::Ingest));
        }
        let dataset = match &self.cfg.dataset {
            DatasetSpec::Corpus { kind, path } => load_dataset(path, *kind).map_err(in_stage(Stage::Ingest))?,
            DatasetSpec::Manifest { path } => import_manifest(path).map_err(in_stage(Stage::Ingest))?,
            DatasetSpec::Synthetic(spec) => {
                make_synthetic_task(spec, self.cfg.generator.seed(), &self.image_dir())
                    .map_err(HarnessError::stage(Stage::Ingest))?
                    .0
            }
        };
        log::info!(
            "ingested {}: {} train / {} val / {} test",
            dataset.name,
            dataset.train.len(),
            dataset.val.len(),
            dataset.test.len()
        );
        export_manifest(&dataset, &manifest).map_err(in_stage(Stage::Ingest))?;
        Ok(dataset)
    }

    fn backend(&self) -> Box<dyn GeneratorBackend> {
        match &self.cfg.generator {
            GeneratorSpec::Mock { .. } => Box::new(MockBackend),
            GeneratorSpec::Remote { remote, .. } => Box::new(RemoteBackend::new(remote.clone())),
        }
    }

    /// Ensures every sample has a cached image and returns the index.
    pub fn generate(&self) -> Result<ImageIndex, HarnessError> {
        let dataset = self.ingest()?;
        let stage = HarnessError::stage(Stage::Generate);
        if let DatasetSpec::Synthetic(spec) = &self.cfg.dataset {
            return make_synthetic_task(spec, self.cfg.generator.seed(), &self.image_dir()).map(|(_, i)| i).map_err(stage);
        }
        let mut opts = GenerateOptions { seed: self.cfg.generator.seed(), size: self.cfg.generator.size(), ..Default::default() };
        if let Some(w) = self.cfg.generator.max_workers() {
            opts.max_workers = w;
        }
        generate_all(&dataset, &*self.backend(), &self.image_dir(), &opts).map_err(|e| stage(e.into()))
    }

    /// Prepared data, with images for every split when `with_images`.
    /// Text-only stages avoid touching the generator.
    fn loaded(&self, with_images: bool) -> Result<&Loaded, HarnessError> {
        if let Some(full) = self.full.get() {
            return Ok(full);
        }
        let slot = if with_images { &self.full } else { &self.text_only };
        if let Some(l) = slot.get() {
            return Ok(l);
        }
        let dataset = self.ingest()?;
        let index = if with_images { Some(self.generate()?) } else { None };
        let cache = ImageCache::new(&self.image_dir(), &dataset.name);
        let source = index.as_ref().map(|index| ImageSource { cache: &cache, index });
        let data = prepare(&dataset, &self.cfg.architecture, source).map_err(in_stage(Stage::Ingest))?;
        Ok(slot.get_or_init(|| Loaded { dataset, data }))
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.cfg.train.clone() }
    }

    fn metadata(&self, loaded: &Loaded, seed: u64, extra: serde_json::Value) -> serde_json::Value {
        let mut meta = json!({
            "dataset": loaded.dataset.name,
            "class_names": loaded.dataset.class_names,
            "architecture": self.cfg.architecture,
            "vocab": loaded.data.vocab,
            "seed": seed,
        });
        if let (Some(m), Some(e)) = (meta.as_object_mut(), extra.as_object()) {
            m.extend(e.clone());
        }
        meta
    }

    fn persist<M: Classifier>(
        &self,
        trained: &TrainedModel<M>,
        loaded: &Loaded,
        seed: u64,
        name: &str,
        extra: serde_json::Value,
        stage: Stage,
    ) -> Result<(), HarnessError> {
        let dir = self.seed_dir(seed);
        fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let metrics = self.metrics_path(seed, name);
        trained.write_metrics(&metrics).map_err(|e| HarnessError::io(&metrics, e))?;
        // checkpoint last: its presence marks the stage as complete
        trained
            .checkpoint(self.metadata(loaded, seed, extra))
            .write(&self.checkpoint_path(seed, name))
            .map_err(in_stage(stage))
    }

    fn restore<M: Classifier>(&self, seed: u64, name: &str, skeleton: M, stage: Stage) -> Result<Option<TrainedModel<M>>, HarnessError> {
        let path = self.checkpoint_path(seed, name);
        if !path.exists() {
            return Ok(None);
        }
        let ckpt = Checkpoint::read(&path).map_err(in_stage(stage))?;
        TrainedModel::from_checkpoint(&ckpt, skeleton).map(Some).map_err(in_stage(stage))
    }

    fn skeleton_rng() -> rand_chacha::ChaCha8Rng {
        rand::SeedableRng::seed_from_u64(0)
    }

    pub fn train_baseline(&self, seed: u64) -> Result<TrainedModel<TextClassifier>, HarnessError> {
        let stage = Stage::TrainBaseline;
        let l = self.loaded(false)?;
        let skeleton = TextClassifier::new(&self.cfg.architecture, l.data.vocab.len(), l.data.k, &mut Self::skeleton_rng())
            .map_err(in_stage(stage))?;
        if let Some(t) = self.restore(seed, BASELINE, skeleton, stage)? {
            return Ok(t);
        }
        let init = InitScheme::Xavier { seed };
        let UnimodalModel::Text(trained) =
            train_unimodal(UnimodalKind::TextClassifier, &init, &self.cfg.architecture, &l.data, &self.train_config(seed))
                .map_err(in_stage(stage))?
        else {
            unreachable!("text kind yields a text model")
        };
        self.persist(&trained, l, seed, BASELINE, json!({}), stage)?;
        Ok(trained)
    }

    pub fn train_image_only(&self, seed: u64) -> Result<TrainedModel<ImageClassifier>, HarnessError> {
        let stage = Stage::TrainBaseline;
        let l = self.loaded(true)?;
        let skeleton =
            ImageClassifier::new(&self.cfg.architecture, l.data.k, &mut Self::skeleton_rng()).map_err(in_stage(stage))?;
        if let Some(t) = self.restore(seed, IMAGE_ONLY, skeleton, stage)? {
            return Ok(t);
        }
        let init = InitScheme::Xavier { seed };
        let UnimodalModel::Image(trained) =
            train_unimodal(UnimodalKind::ImageClassifier, &init, &self.cfg.architecture, &l.data, &self.train_config(seed))
                .map_err(in_stage(stage))?
        else {
            unreachable!("image kind yields an image model")
        };
        self.persist(&trained, l, seed, IMAGE_ONLY, json!({}), stage)?;
        Ok(trained)
    }

    pub fn train_teacher(&self, seed: u64) -> Result<TrainedModel<Teacher>, HarnessError> {
        let stage = Stage::TrainTeacher;
        let l = self.loaded(true)?;
        let skeleton = Teacher::new(&self.cfg.architecture, l.data.vocab.len(), l.data.k, &mut Self::skeleton_rng())
            .map_err(in_stage(stage))?;
        if let Some(t) = self.restore(seed, TEACHER, skeleton, stage)? {
            return Ok(t);
        }
        let init = InitScheme::Xavier { seed };
        let trained = train_teacher(&init, &self.cfg.architecture, &l.data, &self.train_config(seed))
            .map_err(in_stage(stage))?;
        self.persist(&trained, l, seed, TEACHER, json!({}), stage)?;
        Ok(trained)
    }

    /// Distills a student from this seed's teacher, training the teacher first
    /// if needed. `name` selects the checkpoint file.
    pub fn distill(&self, seed: u64, name: &str, dcfg: &DistillConfig) -> Result<TrainedModel<TextClassifier>, HarnessError> {
        let stage = Stage::Distill;
        let l = self.loaded(true)?;
        let skeleton = TextClassifier::new(&self.cfg.architecture, l.data.vocab.len(), l.data.k, &mut Self::skeleton_rng())
            .map_err(in_stage(stage))?;
        if let Some(t) = self.restore(seed, name, skeleton, stage)? {
            return Ok(t);
        }
        let teacher = self.train_teacher(seed)?;
        let init = InitScheme::Xavier { seed };
        let trained = distill_student(&init, &self.cfg.architecture, &teacher.model, &l.data, &self.train_config(seed), dcfg)
            .map_err(in_stage(stage))?;
        self.persist(&trained, l, seed, name, json!({ "distill": dcfg }), stage)?;
        Ok(trained)
    }

    fn row(&self, model: &str, text: bool, image: bool, accuracies: Vec<f64>) -> ResultRow {
        ResultRow {
            model: model.into(),
            text,
            image,
            soft_labels: None,
            embeddings: None,
            accuracies,
            checkpoints: self.cfg.seeds.iter().map(|&s| self.checkpoint_path(s, model)).collect(),
        }
    }

    /// Trains whatever is missing and evaluates every model on the test split.
    pub fn evaluate(&self) -> Result<ResultsTable, HarnessError> {
        let stage = Stage::Evaluate;
        let mut acc: [Vec<f64>; 4] = Default::default();
        for &seed in &self.cfg.seeds {
            let baseline = self.train_baseline(seed)?;
            let image = if self.cfg.image_only { Some(self.train_image_only(seed)?) } else { None };
            let teacher = self.train_teacher(seed)?;
            let student = self.distill(seed, STUDENT, &self.cfg.distill.clone())?;
            let test = &self.loaded(true)?.data.test;
            acc[0].push(evaluate(&baseline.model, test).map_err(in_stage(stage))?);
            if let Some(image) = image {
                acc[1].push(evaluate(&image.model, test).map_err(in_stage(stage))?);
            }
            acc[2].push(evaluate(&teacher.model, test).map_err(in_stage(stage))?);
            acc[3].push(evaluate(&student.model, test).map_err(in_stage(stage))?);
            log::info!(
                "seed {seed}: baseline {:.4} teacher {:.4} student {:.4}",
                acc[0].last().unwrap(),
                acc[2].last().unwrap(),
                acc[3].last().unwrap()
            );
        }
        let [base, image, teacher, student] = acc;
        let mut rows = vec![self.row(BASELINE, true, false, base)];
        if self.cfg.image_only {
            rows.push(self.row(IMAGE_ONLY, false, true, image));
        }
        rows.push(self.row(TEACHER, true, true, teacher));
        rows.push(self.row(STUDENT, true, true, student));
        let table = ResultsTable {
            kind: TableKind::Main,
            dataset: self.loaded(true)?.dataset.name.clone(),
            seeds: self.cfg.seeds.clone(),
            rows,
        };
        table.write_json(&self.out.join("results.json"))?;
        Ok(table)
    }

    /// Four student variants sharing each seed's teacher.
    pub fn ablate(&self) -> Result<ResultsTable, HarnessError> {
        let stage = Stage::Ablate;
        let variants = ablation_variants(&self.cfg.distill);
        let mut rows = Vec::new();
        for (name, soft, emb, dcfg) in &variants {
            let mut accuracies = Vec::new();
            for &seed in &self.cfg.seeds {
                let student = self.distill(seed, name, dcfg).map_err(HarnessError::stage(stage))?;
                accuracies.push(evaluate(&student.model, &self.loaded(true)?.data.test).map_err(in_stage(stage))?);
            }
            let mut row = self.row(name, true, true, accuracies);
            row.soft_labels = Some(*soft);
            row.embeddings = Some(*emb);
            rows.push(row);
        }
        let table = ResultsTable {
            kind: TableKind::Ablation,
            dataset: self.loaded(true)?.dataset.name.clone(),
            seeds: self.cfg.seeds.clone(),
            rows,
        };
        table.write_json(&self.out.join("ablation.json"))?;
        Ok(table)
    }

    /// Writes `<stem>.csv` and `<stem>.md` next to the run outputs.
    pub fn report(&self, table: &ResultsTable, stem: &str, formats: &[ReportFormat]) -> Result<Vec<PathBuf>, HarnessError> {
        formats
            .iter()
            .map(|f| {
                let path = self.out.join(format!("{stem}.{}", f.extension()));
                emit_report(table, *f, &path).map_err(HarnessError::stage(Stage::Report))?;
                Ok(path)
            })
            .collect()
    }
}

/// generate, train baseline(s), train teacher, distill, evaluate, report.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<ResultsTable, HarnessError> {
    let pipeline = Pipeline::open(cfg.clone(), out)?;
    let table = pipeline.evaluate()?;
    pipeline.report(&table, "results", &[ReportFormat::Csv, ReportFormat::Markdown])?;
    Ok(table)
}

/// Loss-term ablation over the run's seeds; emits `ablation.{csv,md}`.
pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<ResultsTable, HarnessError> {
    let pipeline = Pipeline::open(cfg.clone(), out)?;
    let table = pipeline.ablate()?;
    pipeline.report(&table, "ablation", &[ReportFormat::Csv, ReportFormat::Markdown])?;
    Ok(table)
}

/// Vocabulary stored in a checkpoint written by the pipeline.
pub fn checkpoint_vocab(ckpt: &Checkpoint) -> Option<Vocab> {
    ckpt.metadata.get("vocab").and_then(|v| serde_json::from_value::<Vocab>(v.clone()).ok()).map(Vocab::reindex)
}

/// A text-only model restored from a pipeline checkpoint together with what
/// is needed to run it on raw text.
#[derive(Debug, Clone)]
pub struct DeployedModel {
    pub model: TextClassifier,
    pub vocab: Vocab,
    pub class_names: Vec<String>,
}

impl DeployedModel {
    /// Loads a `baseline` or `student` checkpoint written by the pipeline.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let bad = |m: String| HarnessError::Config(format!("{}: {m}", path.display()));
        let ckpt = Checkpoint::read(path).map_err(|e| bad(e.to_string()))?;
        let vocab = checkpoint_vocab(&ckpt).ok_or_else(|| bad("metadata lacks a vocabulary".into()))?;
        let class_names: Vec<String> = ckpt
            .metadata
            .get("class_names")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| bad("metadata lacks class names".into()))?;
        let arch = ckpt
            .metadata
            .get("architecture")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| bad("metadata lacks the architecture".into()))?;
        let mut model = TextClassifier::new(&arch, vocab.len(), class_names.len(), &mut Pipeline::skeleton_rng())
            .map_err(|e| bad(e.to_string()))?;
        ckpt.expect_kind(TextClassifier::KIND).map_err(|e| bad(e.to_string()))?;
        ckpt.load_into(&mut model).map_err(|e| bad(e.to_string()))?;
        Ok(Self { model, vocab, class_names })
    }

    /// Class probabilities for `text`, tokenized like the training data.
    pub fn predict(&self, text: &str) -> Result<Vec<f64>, HarnessError> {
        let example = Example { id: String::new(), tokens: self.vocab.encode(text), patches: None, label: 0 };
        self.model
            .predict(&example)
            .map(|o| o.probs)
            .map_err(|e| HarnessError::Stage { stage: Stage::Evaluate, source: Box::new(e) })
    }
}
