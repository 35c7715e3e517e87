//! Readers for the public distributions of the benchmark corpora.
//!
//! * `imdb`: `aclImdb/{train,test}/{neg,pos}/*.txt`. Validation is a seeded
//!   10% carve-out of the training reviews.
//! * `newsgroups`: `20news-18828/<category>/<doc>`. The 18,828 documents are
//!   shuffled with a fixed seed and cut into 11,353 / 1,261 / 6,214.
//! * `english-news`, `english-wikinews`: the complex word identification TSV
//!   files `{News,WikiNews}_{Train,Dev,Test}.tsv` (directly under the root or
//!   under `english/`).
//! * `generic`: `{train,val,test}.tsv`, one `label<TAB>text` per line.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::preprocess::{char_slice, clean_newsgroup, nfc, normalize_ws, strip_html};
use super::{build_prompt, CorpusError, Dataset, DatasetKind, Split, TextSample};

/// Seed for the IMDB validation carve-out and the 20 Newsgroups split.
pub const SPLIT_SEED: u64 = 20_230_601;

pub const IMDB_VAL_FRACTION: f64 = 0.1;

/// Train/val/test document counts used for the 18,828-document release.
pub const NEWSGROUPS_SPLIT: [usize; 3] = [11_353, 1_261, 6_214];

pub fn load_dataset(source: &Path, kind: DatasetKind) -> Result<Dataset, CorpusError> {
    if !source.exists() {
        return Err(CorpusError::Missing(source.to_path_buf()));
    }
    let dataset = match kind {
        DatasetKind::Imdb => load_imdb(source)?,
        DatasetKind::Newsgroups => load_newsgroups(source)?,
        DatasetKind::EnglishNews => load_cwi(source, kind, "News")?,
        DatasetKind::EnglishWikinews => load_cwi(source, kind, "WikiNews")?,
        DatasetKind::Generic => load_generic(source)?,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn read_lossy(path: &Path) -> Result<String, CorpusError> {
    let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    if !dir.is_dir() {
        return Err(CorpusError::Missing(dir.to_path_buf()));
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CorpusError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| CorpusError::io(dir, err)))
        .collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

fn safe_id(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| p.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect::<String>())
        .collect::<Vec<_>>()
        .join("-")
}

/// Builds a sample; `Ok(None)` when its prompt ends up empty (rejected).
fn make_sample(
    id: String,
    raw: String,
    clean: String,
    label: usize,
    span: Option<(usize, usize)>,
    kind: DatasetKind,
) -> Result<Option<TextSample>, CorpusError> {
    let mut sample = TextSample {
        id,
        raw_text: raw,
        clean_text: clean,
        prompt_text: String::new(),
        label,
        target_span: span,
        prompt_truncated: false,
    };
    match build_prompt(&sample, kind) {
        Ok((prompt, truncated)) => {
            sample.prompt_text = prompt;
            sample.prompt_truncated = truncated;
            Ok(Some(sample))
        }
        Err(CorpusError::EmptyPrompt(id)) => {
            log::warn!("rejecting sample {id}: empty prompt after preprocessing");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn seeded_shuffle<T>(items: &mut [T]) {
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(SPLIT_SEED));
}

fn load_imdb(root: &Path) -> Result<Dataset, CorpusError> {
    let root = if root.join("aclImdb").is_dir() { root.join("aclImdb") } else { root.to_path_buf() };
    let classes = ["neg", "pos"];
    let mut splits: [Vec<TextSample>; 2] = [Vec::new(), Vec::new()];
    for (slot, split) in ["train", "test"].iter().enumerate() {
        for (label, class) in classes.iter().enumerate() {
            for path in sorted_entries(&root.join(split).join(class))? {
                if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                    continue;
                }
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let raw = read_lossy(&path)?;
                let clean = strip_html(&nfc(&raw));
                let id = safe_id(&["imdb", split, class, stem]);
                if let Some(s) = make_sample(id, raw, clean, label, None, DatasetKind::Imdb)? {
                    splits[slot].push(s);
                }
            }
        }
    }
    let [mut train, test] = splits;
    seeded_shuffle(&mut train);
    let n_val = (train.len() as f64 * IMDB_VAL_FRACTION).round() as usize;
    let val = train.drain(..n_val).collect();
    Ok(Dataset {
        name: "imdb".into(),
        kind: DatasetKind::Imdb,
        k: 2,
        class_names: classes.iter().map(|c| c.to_string()).collect(),
        train,
        val,
        test,
    })
}

fn load_newsgroups(root: &Path) -> Result<Dataset, CorpusError> {
    let root = if root.join("20news-18828").is_dir() { root.join("20news-18828") } else { root.to_path_buf() };
    let categories: Vec<PathBuf> = sorted_entries(&root)?.into_iter().filter(|p| p.is_dir()).collect();
    if categories.is_empty() {
        return Err(CorpusError::Missing(root.join("<category>")));
    }
    let mut class_names = Vec::new();
    let mut samples = Vec::new();
    for (label, dir) in categories.iter().enumerate() {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        for path in sorted_entries(dir)? {
            if !path.is_file() {
                continue;
            }
            let file = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let raw = read_lossy(&path)?;
            let clean = clean_newsgroup(&nfc(&raw));
            let id = safe_id(&["20ng", &name, file]);
            if let Some(s) = make_sample(id, raw, clean, label, None, DatasetKind::Newsgroups)? {
                samples.push(s);
            }
        }
        class_names.push(name);
    }
    seeded_shuffle(&mut samples);
    let total: usize = NEWSGROUPS_SPLIT.iter().sum();
    let (n_train, n_val) = if samples.len() == total {
        (NEWSGROUPS_SPLIT[0], NEWSGROUPS_SPLIT[1])
    } else {
        let n = samples.len() as f64;
        (
            (n * NEWSGROUPS_SPLIT[0] as f64 / total as f64).round() as usize,
            (n * NEWSGROUPS_SPLIT[1] as f64 / total as f64).round() as usize,
        )
    };
    let test = samples.split_off((n_train + n_val).min(samples.len()));
    let val = samples.split_off(n_train.min(samples.len()));
    Ok(Dataset {
        name: "newsgroups".into(),
        kind: DatasetKind::Newsgroups,
        k: class_names.len(),
        class_names,
        train: samples,
        val,
        test,
    })
}

/// Re-expresses character offsets of `raw` as offsets into `nfc(raw)`.
fn nfc_span(raw: &str, start: usize, end: usize) -> Result<(String, usize, usize), CorpusError> {
    let prefix: String = raw.chars().take(start).collect();
    let target = char_slice(raw, start, end)?;
    let clean = nfc(raw);
    let s = nfc(&prefix).chars().count();
    let e = s + nfc(target).chars().count();
    Ok((clean, s, e))
}

fn load_cwi(root: &Path, kind: DatasetKind, prefix: &str) -> Result<Dataset, CorpusError> {
    let base = if root.join("english").is_dir() { root.join("english") } else { root.to_path_buf() };
    let mut parts: Vec<Vec<TextSample>> = Vec::new();
    for (split, file_split) in [(Split::Train, "Train"), (Split::Val, "Dev"), (Split::Test, "Test")] {
        let path = base.join(format!("{prefix}_{file_split}.tsv"));
        if !path.is_file() {
            return Err(CorpusError::Missing(path));
        }
        let text = read_lossy(&path)?;
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let location = format!("{}:{}", path.display(), lineno + 1);
            let malformed = |reason: &str| CorpusError::Malformed { location: location.clone(), reason: reason.into() };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 10 {
                return Err(malformed(&format!("expected at least 10 columns, found {}", cols.len())));
            }
            let sentence = cols[1];
            let mut start: usize = cols[2].trim().parse().map_err(|_| malformed("bad start offset"))?;
            let mut end: usize = cols[3].trim().parse().map_err(|_| malformed("bad end offset"))?;
            let target = cols[4];
            let label: usize = match cols[9].trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(malformed(&format!("binary label '{other}'"))),
            };
            if char_slice(sentence, start, end).ok() != Some(target) {
                // Some annotations carry shifted offsets; fall back to the first occurrence.
                let Some(byte) = sentence.find(target).filter(|_| !target.is_empty()) else {
                    return Err(malformed("target phrase not found in sentence"));
                };
                start = sentence[..byte].chars().count();
                end = start + target.chars().count();
            }
            let (clean, s, e) = nfc_span(sentence, start, end)?;
            let id = safe_id(&[kind.as_str(), split.as_str(), &(lineno + 1).to_string()]);
            if let Some(sample) = make_sample(id, line.to_string(), clean, label, Some((s, e)), kind)? {
                samples.push(sample);
            }
        }
        parts.push(samples);
    }
    let test = parts.pop().unwrap_or_default();
    let val = parts.pop().unwrap_or_default();
    let train = parts.pop().unwrap_or_default();
    Ok(Dataset {
        name: kind.as_str().into(),
        kind,
        k: 2,
        class_names: vec!["simple".into(), "complex".into()],
        train,
        val,
        test,
    })
}

fn load_generic(root: &Path) -> Result<Dataset, CorpusError> {
    let mut rows: Vec<(Split, usize, String, String)> = Vec::new();
    let mut labels = BTreeSet::new();
    for split in Split::ALL {
        let path = root.join(format!("{split}.tsv"));
        if !path.is_file() {
            return Err(CorpusError::Missing(path));
        }
        for (lineno, line) in read_lossy(&path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((label, text)) = line.split_once('\t') else {
                return Err(CorpusError::Malformed {
                    location: format!("{}:{}", path.display(), lineno + 1),
                    reason: "expected label<TAB>text".into(),
                });
            };
            labels.insert(label.trim().to_string());
            rows.push((split, lineno + 1, label.trim().to_string(), text.to_string()));
        }
    }
    let class_names: Vec<String> = labels.into_iter().collect();
    let mut dataset = Dataset {
        name: root.file_name().and_then(|n| n.to_str()).unwrap_or("generic").to_string(),
        kind: DatasetKind::Generic,
        k: class_names.len(),
        class_names: class_names.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (split, lineno, label, text) in rows {
        let label = class_names.iter().position(|c| *c == label).expect("collected above");
        let clean = normalize_ws(&nfc(&text));
        let id = safe_id(&["generic", split.as_str(), &lineno.to_string()]);
        if let Some(s) = make_sample(id, text, clean, label, None, DatasetKind::Generic)? {
            match split {
                Split::Train => dataset.train.push(s),
                Split::Val => dataset.val.push(s),
                Split::Test => dataset.test.push(s),
            }
        }
    }
    Ok(dataset)
}
