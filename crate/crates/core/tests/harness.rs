use std::fs;
use std::path::Path;
use std::process::Command;

use genpriv::architectures::{ArchitectureConfig, EncoderSpec, InitScheme};
use genpriv::genimage::ImageCache;
use genpriv::harness::pipeline::{BASELINE, STUDENT, TEACHER};
use genpriv::harness::{
    ablate, run_pipeline, DatasetSpec, HarnessError, Pipeline, ResultsTable, RunConfig, SyntheticTaskSpec,
};
use genpriv::trainer::{evaluate, prepare, train_teacher, ImageSource, TrainConfig};

const CONFIG: &str = r#"
seeds = [1, 2]

[dataset]
source = "synthetic"
n_train = 40
n_val = 12
n_test = 12
vocab_size = 40
epsilon = 0.6

[architecture]
embedding_dim = 8
fusion_heads = 2
fusion_ffn_mult = 2

[architecture.text_encoder]
kind = "toy-text"
d_model = 16
depth = 1
heads = 2
max_len = 20

[architecture.image_encoder]
kind = "toy-image"
d_model = 16
depth = 1
heads = 2
image_size = 16
patch_size = 8

[train]
epochs = 2
lr0 = 0.002
"#;

fn config() -> RunConfig {
    RunConfig::from_toml(CONFIG).unwrap()
}

fn accuracies(t: &ResultsTable) -> Vec<(String, Vec<f64>)> {
    t.rows.iter().map(|r| (r.model.clone(), r.accuracies.clone())).collect()
}

#[test]
fn pipeline_emits_main_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = run_pipeline(&config(), dir.path()).unwrap();
    let models: Vec<_> = table.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(models, [BASELINE, "image-only", TEACHER, STUDENT]);
    let flags: Vec<_> = table.rows.iter().map(|r| (r.text, r.image)).collect();
    assert_eq!(flags, [(true, false), (false, true), (true, true), (true, true)]);
    assert_eq!(table.seeds, [1, 2]);
    for name in ["results.json", "results.csv", "results.md", "config.toml", "dataset/manifest.jsonl"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("run.lock").exists(), "lock released");
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(ResultsTable::read_json(&dir.path().join("results.json")).unwrap(), table);

    // rerun: every stage is served from checkpoints
    let stamp = fs::metadata(dir.path().join("seed-1/teacher.ckpt")).unwrap().modified().unwrap();
    let again = run_pipeline(&config(), dir.path()).unwrap();
    assert_eq!(again, table);
    assert_eq!(fs::metadata(dir.path().join("seed-1/teacher.ckpt")).unwrap().modified().unwrap(), stamp);
}

#[test]
fn every_cell_is_reproducible_from_its_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let table = run_pipeline(&config(), dir.path()).unwrap();
    let cfg = config();
    let DatasetSpec::Synthetic(spec) = &cfg.dataset else { unreachable!() };
    let (ds, index) = genpriv::harness::make_synthetic_task(spec, 0, &dir.path().join("images")).unwrap();
    let cache = ImageCache::new(&dir.path().join("images"), &ds.name);
    let data = prepare(&ds, &cfg.architecture, Some(ImageSource { cache: &cache, index: &index })).unwrap();
    let pipeline = Pipeline::open(cfg, dir.path()).unwrap();
    for (i, &seed) in table.seeds.iter().enumerate() {
        let teacher = pipeline.train_teacher(seed).unwrap();
        assert_eq!(evaluate(&teacher.model, &data.test).unwrap(), table.row(TEACHER).unwrap().accuracies[i]);
        let student = genpriv::harness::DeployedModel::load(&pipeline.checkpoint_path(seed, STUDENT)).unwrap();
        assert_eq!(genpriv::trainer::evaluate(&student.model, &data.test).unwrap(), table.row(STUDENT).unwrap().accuracies[i]);
    }
}

#[test]
fn interrupted_runs_resume_to_the_same_table() {
    let reference = tempfile::tempdir().unwrap();
    let expected = run_pipeline(&config(), reference.path()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    {
        // stop after the baseline and teacher of the first seed
        let p = Pipeline::open(config(), dir.path()).unwrap();
        p.train_baseline(1).unwrap();
        p.train_teacher(1).unwrap();
    }
    // a crash between the metrics log and the checkpoint leaves no checkpoint
    fs::write(dir.path().join("seed-1/student.metrics.jsonl"), "{\"partial\":true}\n").unwrap();
    let resumed = run_pipeline(&config(), dir.path()).unwrap();
    assert_eq!(accuracies(&resumed), accuracies(&expected));
    let a = fs::read_to_string(dir.path().join("seed-2/student.metrics.jsonl")).unwrap();
    let b = fs::read_to_string(reference.path().join("seed-2/student.metrics.jsonl")).unwrap();
    assert_eq!(a, b, "identical metric histories");
}

#[test]
fn ablation_table_and_reduction_identity() {
    let dir = tempfile::tempdir().unwrap();
    let main = run_pipeline(&config(), dir.path()).unwrap();
    let table = ablate(&config(), dir.path()).unwrap();
    let flags: Vec<_> = table.rows.iter().map(|r| (r.soft_labels, r.embeddings)).collect();
    assert_eq!(
        flags,
        [(Some(false), Some(false)), (Some(true), Some(false)), (Some(false), Some(true)), (Some(true), Some(true))]
    );
    // no distillation terms: the same run as the baseline
    assert_eq!(table.rows[0].accuracies, main.row(BASELINE).unwrap().accuracies);
    let p = Pipeline::open(config(), dir.path()).unwrap();
    let plain = fs::read(p.checkpoint_path(1, &table.rows[0].model)).unwrap();
    let base = fs::read(p.checkpoint_path(1, BASELINE)).unwrap();
    let weights = |b: &[u8]| genpriv::architectures::Checkpoint::from_bytes(b).unwrap().data;
    assert_eq!(weights(&plain), weights(&base));
    // both terms on is the configured student
    assert_eq!(table.rows[3].model, STUDENT);
    assert_eq!(table.rows[3].accuracies, main.row(STUDENT).unwrap().accuracies);
    assert!(dir.path().join("ablation.md").exists() && dir.path().join("ablation.csv").exists());
}

#[test]
fn validation_lock_and_config_guard() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = config();
    bad.dataset = DatasetSpec::Manifest { path: dir.path().join("missing.jsonl") };
    let err = run_pipeline(&bad, &dir.path().join("out")).unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)));
    assert_eq!(err.exit_code(), 2);
    assert!(!dir.path().join("out").exists(), "no work before validation");

    let out = dir.path().join("run");
    let held = Pipeline::open(config(), &out).unwrap();
    let err = Pipeline::open(config(), &out).err().unwrap();
    assert!(matches!(err, HarnessError::Locked(_)));
    assert_eq!(err.exit_code(), 3);
    drop(held);

    // a lock left by a dead process is taken over
    fs::write(out.join("run.lock"), "999999999").unwrap();
    drop(Pipeline::open(config(), &out).unwrap());

    let mut other = config();
    other.train.epochs = 3;
    assert!(matches!(Pipeline::open(other, &out), Err(HarnessError::Config(m)) if m.contains("different config")));
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_genpriv")).args(args).env("RUST_LOG", "warn").output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn cli_verbs_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, CONFIG.replace("seeds = [1, 2]", "seeds = [5]")).unwrap();
    let (c, o) = (cfg_path.to_str().unwrap(), dir.path().join("out"));
    let o = o.to_str().unwrap();
    let base = ["--config", c, "--out", o];
    let run = |verb: &str| {
        let mut args = vec![verb];
        args.extend(base);
        cli(&args)
    };

    let (code, stdout, _) = run("ingest");
    assert_eq!(code, 0);
    assert!(stdout.contains("40 train, 12 val, 12 test"), "{stdout}");
    assert_eq!(run("generate").0, 0);
    let (code, _, stderr) = run("report");
    assert_eq!(code, 17, "nothing to report yet: {stderr}");
    for verb in ["train-baseline", "train-teacher", "distill"] {
        assert_eq!(run(verb).0, 0, "{verb}");
    }
    assert!(Path::new(o).join("seed-5/student.ckpt").exists());
    let (code, stdout, _) = run("evaluate");
    assert_eq!(code, 0);
    assert!(stdout.contains("| teacher |"), "{stdout}");
    let (code, stdout, _) = cli(&["report", "--config", c, "--out", o, "--format", "csv"]);
    assert_eq!(code, 0);
    assert!(stdout.trim().ends_with("results.csv"));
    assert_eq!(run("run").0, 0);

    fs::write(dir.path().join("typo.toml"), format!("{CONFIG}\nepoch = 3\n")).unwrap();
    let (code, _, stderr) = cli(&["run", "--config", dir.path().join("typo.toml").to_str().unwrap(), "--out", o]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("epoch"));

    // invalid architecture is a config error
    let bad_arch = dir.path().join("bad.toml");
    fs::write(&bad_arch, CONFIG.replace("embedding_dim = 8", "embedding_dim = 0")).unwrap();
    let (code, _, _) = cli(&["run", "--config", bad_arch.to_str().unwrap(), "--out", dir.path().join("o3").to_str().unwrap()]);
    assert_eq!(code, 2);
}

/// Teacher accuracy does not drop as the images get more faithful
/// (seed-averaged, five seeds).
#[test]
fn teacher_accuracy_monotone_in_image_fidelity() {
    let arch = ArchitectureConfig {
        text_encoder: EncoderSpec { max_len: 20, ..EncoderSpec::toy_text(16, 1, 2) },
        image_encoder: EncoderSpec::toy_image(16, 1, 2, 16, 8),
        fusion_heads: 2,
        fusion_ffn_mult: 2,
        embedding_dim: 8,
    };
    let dir = tempfile::tempdir().unwrap();
    let mut means = Vec::new();
    for q in [0.5, 0.8, 0.95] {
        let mut total = 0.0;
        for seed in 0..5u64 {
            let spec = SyntheticTaskSpec {
                fidelity: q,
                epsilon: 0.9,
                n_train: 300,
                n_val: 100,
                n_test: 300,
                ..Default::default()
            };
            let (ds, index) = genpriv::harness::make_synthetic_task(&spec, seed, dir.path()).unwrap();
            let cache = ImageCache::new(dir.path(), &ds.name);
            let data = prepare(&ds, &arch, Some(ImageSource { cache: &cache, index: &index })).unwrap();
            let cfg = TrainConfig { epochs: 6, lr0: 3e-3, seed, ..Default::default() };
            let t = train_teacher(&InitScheme::Xavier { seed }, &arch, &data, &cfg).unwrap();
            total += evaluate(&t.model, &data.test).unwrap();
        }
        means.push(total / 5.0);
    }
    eprintln!("teacher accuracy at q = 0.5, 0.8, 0.95: {means:?}");
    assert!(means[0] <= means[1] && means[1] <= means[2], "{means:?}");
}

fn text_accuracy(spec: &SyntheticTaskSpec, epochs: usize) -> f64 {
    let arch = ArchitectureConfig {
        text_encoder: EncoderSpec { max_len: 20, ..EncoderSpec::toy_text(16, 1, 2) },
        image_encoder: EncoderSpec::toy_image(16, 1, 2, 16, 8),
        fusion_heads: 2,
        fusion_ffn_mult: 2,
        embedding_dim: 8,
    };
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = genpriv::harness::make_synthetic_task(spec, 3, dir.path()).unwrap();
    let data = prepare(&ds, &arch, None).unwrap();
    let cfg = TrainConfig { epochs, lr0: 3e-3, seed: 3, ..Default::default() };
    let m = genpriv::trainer::train_unimodal(
        genpriv::trainer::UnimodalKind::TextClassifier,
        &InitScheme::Xavier { seed: 3 },
        &arch,
        &data,
        &cfg,
    )
    .unwrap();
    let genpriv::trainer::UnimodalModel::Text(m) = m else { unreachable!() };
    evaluate(&m.model, &data.test).unwrap()
}

#[test]
fn unambiguous_text_is_separable() {
    let spec = SyntheticTaskSpec { epsilon: 0.0, fidelity: 1.0, n_train: 400, n_val: 100, n_test: 400, ..Default::default() };
    let acc = text_accuracy(&spec, 4);
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn fully_ambiguous_text_is_at_chance() {
    let spec = SyntheticTaskSpec { epsilon: 1.0, n_train: 400, n_val: 100, n_test: 2000, ..Default::default() };
    let acc = text_accuracy(&spec, 3);
    assert!((acc - 0.25).abs() <= 0.05, "{acc}");
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["synthetic.toml", "imdb.toml"] {
        let cfg = RunConfig::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!cfg.seeds.is_empty());
    }
    let cfg = RunConfig::load(&dir.join("synthetic.toml")).unwrap();
    cfg.validate().unwrap();
}
