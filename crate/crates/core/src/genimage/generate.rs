use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::cache::{GeneratorSnapshot, ImageCache, ImageIndex, IndexEntry};
use super::{GenerateError, GeneratedImage, GeneratorBackend, ImageSize, DEFAULT_IMAGE_SIZE};
use crate::corpus::{truncate_tokens, Dataset, Split, TextSample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedSample {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateOptions {
    /// One fixed generator seed for the whole run.
    pub seed: u64,
    pub size: ImageSize,
    /// Worker cap; the backend's own concurrency limit also applies.
    pub max_workers: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            size: DEFAULT_IMAGE_SIZE,
            max_workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

struct Job<'a> {
    split: Split,
    sample: &'a TextSample,
    prompt: String,
    fingerprint: String,
}

fn produce(
    backend: &dyn GeneratorBackend,
    cache: &ImageCache,
    job: &Job<'_>,
    opts: &GenerateOptions,
) -> Result<IndexEntry, GenerateError> {
    let pixels = backend.generate(&job.prompt, opts.seed, opts.size).map_err(|e| match e {
        GenerateError::EmptyPrompt(_) => GenerateError::EmptyPrompt(job.sample.id.clone()),
        other => other,
    })?;
    let image = GeneratedImage { sample_id: job.sample.id.clone(), pixels, fingerprint: job.fingerprint.clone() };
    cache.store(job.split, &image)
}

/// Ensures every sample of every split has a cached image and persists the
/// index. Cached images whose fingerprint matches are reused without calling
/// the backend. If some samples fail, the index of the successful ones is
/// still written and [`GenerateError::Partial`] lists the failures.
pub fn generate_all(
    dataset: &Dataset,
    backend: &dyn GeneratorBackend,
    cache_dir: &Path,
    opts: &GenerateOptions,
) -> Result<ImageIndex, GenerateError> {
    if dataset.is_empty() {
        return Err(GenerateError::EmptyDataset);
    }
    if opts.size.width == 0 || opts.size.height == 0 {
        return Err(GenerateError::InvalidSize(opts.size.width, opts.size.height));
    }
    let cache = ImageCache::new(cache_dir, &dataset.name);
    let mut index = ImageIndex::new(
        dataset.name.clone(),
        GeneratorSnapshot {
            backend: backend.name().to_string(),
            version: backend.version(),
            deterministic: backend.deterministic(),
            seed: opts.seed,
            size: opts.size,
        },
    );
    let mut failed = Vec::new();
    let mut pending = Vec::new();
    for (split, sample) in dataset.iter() {
        let (prompt, _) = truncate_tokens(&sample.prompt_text, backend.prompt_budget());
        let fingerprint = backend.fingerprint(&prompt, opts.seed, opts.size);
        match cache.lookup(split, &sample.id, &fingerprint) {
            Ok(Some(_)) => {
                let path = ImageCache::relative_path(split, &sample.id);
                index.entries.insert(sample.id.clone(), IndexEntry { split, path, fingerprint });
            }
            Ok(None) => pending.push(Job { split, sample, prompt, fingerprint }),
            Err(e @ GenerateError::Integrity { .. }) => {
                log::warn!("regenerating {}: {e}", sample.id);
                pending.push(Job { split, sample, prompt, fingerprint });
            }
            Err(e) => return Err(e),
        }
    }
    log::info!(
        "{}: {} cached, {} to generate with backend {}",
        dataset.name,
        index.len(),
        pending.len(),
        backend.name()
    );

    let workers = opts.max_workers.max(1).min(backend.concurrency_limit().max(1)).min(pending.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<IndexEntry, GenerateError>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = pending.get(i) else { break };
                let r = produce(backend, &cache, job, opts);
                results.lock().expect("result lock").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("result lock");
    results.sort_by_key(|(i, _)| *i);
    for (i, result) in results {
        let id = &pending[i].sample.id;
        match result {
            Ok(entry) => {
                index.entries.insert(id.clone(), entry);
            }
            Err(e) => {
                log::error!("generation failed for {id}: {e}");
                failed.push(FailedSample { id: id.clone(), reason: e.to_string() });
            }
        }
    }
    cache.write_index(&index)?;
    if failed.is_empty() {
        Ok(index)
    } else {
        Err(GenerateError::Partial { index: Box::new(index), failed })
    }
}
