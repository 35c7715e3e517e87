use std::sync::Arc;

use rayon::prelude::*;

use super::TrainError;
use crate::architectures::{image_patches, ArchitectureConfig, Example, Vocab};
use crate::corpus::{Dataset, Split, TextSample};
use crate::genimage::{ImageCache, ImageIndex};

/// Where cached privileged images come from.
#[derive(Debug, Clone, Copy)]
pub struct ImageSource<'a> {
    pub cache: &'a ImageCache,
    pub index: &'a ImageIndex,
}

/// Tokenized splits with decoded image patches, ready for the models.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: Vocab,
    pub k: usize,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl PreparedData {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// First sample (in split order) lacking an image.
    pub fn require_images(&self, splits: &[Split]) -> Result<(), TrainError> {
        for &split in splits {
            if let Some(ex) = self.split(split).iter().find(|e| e.patches.is_none()) {
                return Err(TrainError::MissingImage(ex.id.clone()));
            }
        }
        Ok(())
    }

    pub fn has_images(&self) -> bool {
        Split::ALL.iter().all(|&s| self.split(s).iter().all(|e| e.patches.is_some()))
    }
}

fn examples(
    samples: &[TextSample],
    vocab: &Vocab,
    arch: &ArchitectureConfig,
    images: Option<ImageSource<'_>>,
) -> Result<Vec<Example>, TrainError> {
    let spec = &arch.image_encoder;
    samples
        .par_iter()
        .map(|s| {
            let patches = match images.and_then(|src| src.index.get(&s.id).map(|e| (src, e))) {
                Some((src, entry)) => {
                    let img = src.cache.load(&s.id, entry)?;
                    Some(Arc::new(image_patches(&img, spec.image_size, spec.patch_size)?))
                }
                None => None,
            };
            Ok(Example { id: s.id.clone(), tokens: vocab.encode(&s.model_text()), patches, label: s.label })
        })
        .collect()
}

/// Builds the vocabulary from the training split and tokenizes every split.
/// Samples missing from `images` get no patches; stages that need images
/// check for that before training starts.
pub fn prepare(
    dataset: &Dataset,
    arch: &ArchitectureConfig,
    images: Option<ImageSource<'_>>,
) -> Result<PreparedData, TrainError> {
    arch.validate()?;
    let texts: Vec<String> = dataset.train.iter().map(TextSample::model_text).collect();
    let vocab = Vocab::build(texts.iter().map(String::as_str), arch.text_encoder.max_len);
    Ok(PreparedData {
        k: dataset.k,
        train: examples(&dataset.train, &vocab, arch, images)?,
        val: examples(&dataset.val, &vocab, arch, images)?,
        test: examples(&dataset.test, &vocab, arch, images)?,
        vocab,
    })
}
