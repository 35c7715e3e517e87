//! Line-delimited JSON manifest.
//!
//! Line 1 is a header object:
//! `{"format":"genpriv-manifest","version":1,"name":..,"kind":..,"k":..,"class_names":[..],"prompt_token_budget":256}`.
//! Every further line is one sample:
//! `{"id","split","label","raw_text","clean_text","prompt_text","prompt_truncated","target_span"}`
//! where `target_span` is `[start, end]` in characters or `null`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, DatasetKind, Split, TextSample, PROMPT_TOKEN_BUDGET};

pub const MANIFEST_FORMAT: &str = "genpriv-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    name: String,
    kind: DatasetKind,
    k: usize,
    class_names: Vec<String>,
    prompt_token_budget: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    split: Split,
    label: usize,
    raw_text: String,
    clean_text: String,
    prompt_text: String,
    prompt_truncated: bool,
    target_span: Option<(usize, usize)>,
}

pub fn export_manifest(dataset: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let io = |e| CorpusError::io(path, e);
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let header = Header {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        name: dataset.name.clone(),
        kind: dataset.kind,
        k: dataset.k,
        class_names: dataset.class_names.clone(),
        prompt_token_budget: PROMPT_TOKEN_BUDGET,
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| io(e.into()))?;
    out.write_all(b"\n").map_err(io)?;
    for (split, s) in dataset.iter() {
        let record = Record {
            id: s.id.clone(),
            split,
            label: s.label,
            raw_text: s.raw_text.clone(),
            clean_text: s.clean_text.clone(),
            prompt_text: s.prompt_text.clone(),
            prompt_truncated: s.prompt_truncated,
            target_span: s.target_span,
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn import_manifest(path: &Path) -> Result<Dataset, CorpusError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CorpusError::Missing(path.to_path_buf()),
        _ => CorpusError::io(path, e),
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let schema = |line: usize, reason: String| CorpusError::Schema { line, reason };
    let (_, first) = lines.next().ok_or_else(|| schema(1, "empty manifest".into()))?;
    let first = first.map_err(|e| CorpusError::io(path, e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| schema(1, e.to_string()))?;
    if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
        return Err(schema(1, format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut dataset = Dataset {
        name: header.name,
        kind: header.kind,
        k: header.k,
        class_names: header.class_names,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, line) in lines {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line).map_err(|e| schema(i + 1, e.to_string()))?;
        if r.label >= dataset.k {
            return Err(schema(i + 1, format!("label {} >= class count {}", r.label, dataset.k)));
        }
        let sample = TextSample {
            id: r.id,
            raw_text: r.raw_text,
            clean_text: r.clean_text,
            prompt_text: r.prompt_text,
            label: r.label,
            target_span: r.target_span,
            prompt_truncated: r.prompt_truncated,
        };
        match r.split {
            Split::Train => dataset.train.push(sample),
            Split::Val => dataset.val.push(sample),
            Split::Test => dataset.test.push(sample),
        }
    }
    dataset.validate()?;
    Ok(dataset)
}
